#include <doctest.h>

#include <cmath>
#include <numeric>

#include "arm/errors.hpp"
#include "arm/model.hpp"
#include "arm/model_io.hpp"
#include "test_support.hpp"

using namespace arm;
using support::SplitMix64;

namespace {

FeatureSpec spec_10_50_75(Monotonicity m = Monotonicity::Decreasing) {
  return FeatureSpec{"x", m, {10, 50, 75}, {-7, -8, -9}, true};
}

std::vector<std::uint8_t> bits(std::initializer_list<int> v) { return {v.begin(), v.end()}; }

/// One-feature, one-subscale model with the given coefficients.
ArmModel single_feature_model(const FeatureSpec& spec, std::vector<double> beta, double bias = 0.0,
                              double weight = 1.0, double gamma0 = 0.0) {
  Subscale s{"S", {0}, std::move(beta), bias};
  return ArmModel(Binarizer({spec}), {s}, {weight}, gamma0);
}

}  // namespace

TEST_CASE("binarize_value: threshold indicators and missing handling") {
  const auto spec = spec_10_50_75();
  CHECK(binarize_value(spec, 30) == bits({0, 1, 1, 1}));
  CHECK(binarize_value(spec, -9) == bits({0, 0, 0, 0}));
  CHECK(binarize_value(spec, support::nan()) == bits({0, 0, 0, 0}));
  CHECK(binarize_value(spec, 5) == bits({1, 1, 1, 1}));
  CHECK(binarize_value(spec, 10) == bits({0, 1, 1, 1}));
  CHECK(binarize_value(spec, 100) == bits({0, 0, 0, 1}));

  const auto inc = spec_10_50_75(Monotonicity::Increasing);
  CHECK(binarize_value(inc, 30) == bits({1, 0, 0, 1}));
  CHECK(binarize_value(inc, 50) == bits({1, 0, 0, 1}));
  CHECK(binarize_value(inc, 80) == bits({1, 1, 1, 1}));
}

TEST_CASE("binarize_dataset: complements, missing rows, empty input") {
  const FeatureSpec one{"x", Monotonicity::Decreasing, {10}, {-9}, true};
  const Binarizer b({one});
  const std::vector<std::vector<double>> rows{{5.0}};
  const auto X = binarize_dataset(b, rows);
  REQUIRE(X.cols() == 4);
  CHECK(X(0, 0) == 1);
  CHECK(X(0, 1) == 1);
  CHECK(X(0, 2) == 0);
  CHECK(X(0, 3) == 0);

  const Binarizer b3({spec_10_50_75()});
  const std::vector<std::vector<double>> missing{{-9.0}};
  const auto M = binarize_dataset(b3, missing);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(M(0, j) == 0);
    CHECK(M(0, 4 + j) == 1);
  }

  const auto E = binarize_dataset(b3, std::vector<std::vector<double>>{});
  CHECK(E.rows() == 0);
  CHECK(E.cols() == 8);

  const std::vector<std::vector<double>> bad{{1.0, 2.0}};
  CHECK_THROWS_AS(binarize_dataset(b3, bad), ColumnCountMismatch);
}

TEST_CASE("complement identity holds on random rows") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto model = support::random_model(rng, 5, 2);
    const auto& b = model.binarizer();
    for (int r = 0; r < 20; ++r) {
      const auto row = b.binarize_row(support::random_row(rng, b));
      for (std::size_t j = 0; j < b.original_count(); ++j) {
        REQUIRE(row[j] <= 1);
        REQUIRE(row[j] + row[b.original_count() + j] == 1);
      }
    }
  }
}

TEST_CASE("display names describe each indicator") {
  const Binarizer b({spec_10_50_75(), spec_10_50_75(Monotonicity::Increasing)});
  CHECK(b.column(0).display_name == "x < 10");
  CHECK(b.column(3).display_name == "x is not missing");
  CHECK(b.column(4).display_name == "x > 10");
  CHECK(b.column(b.original_count()).display_name == "x >= 10 or missing");
  CHECK(b.column(b.original_count()).complement);
}

TEST_CASE("feature specs reject unordered thresholds") {
  FeatureSpec s{"x", Monotonicity::Decreasing, {10, 10}, {}, true};
  CHECK_THROWS_AS(s.validate(), InvalidModel);
  s.thresholds = {10, 5};
  CHECK_THROWS_AS(Binarizer({s}), InvalidModel);
}

TEST_CASE("scoring table: partial sums per interval") {
  const auto model = single_feature_model(spec_10_50_75(), {0.5, 0.3, 0.2, 0.1});
  const auto t = model.scoring_table(0, 0);
  REQUIRE(t.rows.size() == 4);
  CHECK(t.rows[0].points == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(t.rows[1].points == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(t.rows[2].points == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(t.rows[3].points == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(t.missing_points == 0.0);
  CHECK(t.lookup(9.999) == t.rows[0].points);
  CHECK(t.lookup(10) == t.rows[1].points);
  CHECK(t.lookup(75) == t.rows[3].points);
  CHECK(t.lookup(-9) == 0.0);
  CHECK(t.rows[0].label == "x < 10");
  CHECK(t.rows[1].label == "10 <= x < 50");
  CHECK(t.rows[3].label == "x >= 75");

  const auto zero = single_feature_model(spec_10_50_75(), {0, 0, 0, 0}).scoring_table(0, 0);
  for (const auto& r : zero.rows) CHECK(r.points == 0.0);

  CHECK_THROWS_AS(model.scoring_table(0, 1), FeatureNotInSubscale);
  CHECK_THROWS_AS(model.scoring_table(1, 0), FeatureNotInSubscale);
}

TEST_CASE("scoring table equals the step-function sum on a dense grid") {
  SplitMix64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = support::random_model(rng, 4, 2);
    for (std::size_t p = 0; p < model.feature_count(); ++p) {
      const auto table = model.scoring_table(model.subscale_of_feature(p), p);
      for (int g = 0; g < 1000; ++g) {
        const double v = -20.0 + 140.0 * g / 999.0;
        REQUIRE(table.lookup(v) == model.feature_points(p, v));
      }
      for (double t : table.spec.thresholds) REQUIRE(table.lookup(t) == model.feature_points(p, t));
      REQUIRE(table.lookup(-9) == model.feature_points(p, -9));
    }
  }
}

TEST_CASE("scoring table points are monotone for constrained features") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto model = support::random_model(rng, 4, 2);
    for (std::size_t p = 0; p < model.feature_count(); ++p) {
      const auto m = model.binarizer().specs()[p].monotonicity;
      if (m == Monotonicity::None) continue;
      const auto t = model.scoring_table(model.subscale_of_feature(p), p);
      for (std::size_t j = 1; j < t.rows.size(); ++j) {
        if (m == Monotonicity::Decreasing) REQUIRE(t.rows[j].points <= t.rows[j - 1].points);
        if (m == Monotonicity::Increasing) REQUIRE(t.rows[j].points >= t.rows[j - 1].points);
      }
    }
  }
}

TEST_CASE("subscale risk is the sigmoid of bias plus active coefficients") {
  const auto zero = single_feature_model(spec_10_50_75(), {0, 0, 0, 0});
  const auto row = zero.binarizer().binarize_row(std::vector<double>{30});
  CHECK(zero.subscale_risk(0, row).points == 0.0);
  CHECK(zero.subscale_risk(0, row).risk == 0.5);

  // 1.799 points with no bias: sigma(1.799) computed independently.
  const auto m = single_feature_model(spec_10_50_75(), {1.799, 0, 0, 0});
  const auto r = m.subscale_risk(0, m.binarizer().binarize_row(std::vector<double>{5}));
  CHECK(r.points == 1.799);
  CHECK(r.risk == doctest::Approx(1.0 / (1.0 + std::exp(-1.799))).epsilon(1e-15));
  CHECK(r.risk == doctest::Approx(0.858).epsilon(5e-4));

  // A displayed risk of 81.9% at 1.799 points implies a negative subscale bias.
  const double implied_bias = std::log(0.819 / (1 - 0.819)) - 1.799;
  CHECK(implied_bias == doctest::Approx(-0.29).epsilon(0.05));
  const auto biased = single_feature_model(spec_10_50_75(), {1.799, 0, 0, 0}, implied_bias);
  CHECK(biased.subscale_risk(0, biased.binarizer().binarize_row(std::vector<double>{5})).risk ==
        doctest::Approx(0.819).epsilon(1e-12));
}

TEST_CASE("sigmoid clamps extreme logits inside (0, 1)") {
  CHECK(sigmoid(1e6) < 1.0);
  CHECK(sigmoid(-1e6) > 0.0);
  CHECK(sigmoid(1e6) == sigmoid(kLogitClamp));
  CHECK(sigmoid(0) == 0.5);
}

TEST_CASE("predict: zero second layer gives one half") {
  SplitMix64 rng(3);
  auto base = support::random_model(rng, 4, 2);
  const ArmModel m(base.binarizer(), base.subscales(), {0.0, 0.0}, 0.0);
  for (int i = 0; i < 20; ++i) CHECK(m.predict(support::random_row(rng, m.binarizer())).probability == 0.5);
  CHECK_THROWS_AS(m.predict(std::vector<double>{1.0}), ColumnCountMismatch);
}

TEST_CASE("predict: breakdown reproduces the probability exactly") {
  SplitMix64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = support::random_model(rng, 6, 3);
    for (int i = 0; i < 20; ++i) {
      const auto p = m.predict(support::random_row(rng, m.binarizer()), 3, 3);
      REQUIRE(p.probability > 0.0);
      REQUIRE(p.probability < 1.0);
      REQUIRE(probability_from_breakdown(m.bias(), p.subscales) == p.probability);
      for (const auto& s : p.subscales) {
        REQUIRE(s.risk > 0.0);
        REQUIRE(s.risk < 1.0);
        REQUIRE(s.weighted == s.weight * s.risk);
      }
    }
  }
}

TEST_CASE("predict is deterministic") {
  SplitMix64 rng(8);
  const auto m = support::random_model(rng, 5, 2);
  const auto row = support::random_row(rng, m.binarizer());
  CHECK(m.predict(row).probability == m.predict(row).probability);
}

TEST_CASE("monotone features move the probability in their declared direction") {
  SplitMix64 rng(29);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = support::random_model(rng, 5, 2);
    for (int r = 0; r < 10; ++r) {
      auto row = support::random_row(rng, m.binarizer(), 0.0);
      for (std::size_t p = 0; p < m.feature_count(); ++p) {
        const auto& spec = m.binarizer().specs()[p];
        if (spec.monotonicity == Monotonicity::None) continue;
        double prev = -1;
        for (double v = -10; v <= 110; v += 0.5) {
          if (spec.is_missing(v)) continue;
          row[p] = v;
          const double prob = m.predict(row).probability;
          if (prev >= 0) {
            if (spec.monotonicity == Monotonicity::Decreasing) REQUIRE(prob <= prev);
            else REQUIRE(prob >= prev);
          }
          prev = prob;
        }
      }
    }
  }
}

TEST_CASE("variable importance: single nonzero weight ranks first") {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto base = support::random_model(rng, 6, 3);
    const std::size_t k = rng.below(3);
    std::vector<double> w(3, 0.0);
    w[k] = 1.0;
    const ArmModel m(base.binarizer(), base.subscales(), w, 0.0);
    const auto imp = m.variable_importance(m.binarizer().binarize_row(support::random_row(rng, m.binarizer())));
    REQUIRE(imp.size() == 2);
    CHECK(imp[0].subscale == k);
  }
}

TEST_CASE("variable importance matches a brute-force ranking") {
  SplitMix64 rng(37);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = support::random_model(rng, 6, 3);
    const auto row = m.binarizer().binarize_row(support::random_row(rng, m.binarizer()));
    const auto imp = m.variable_importance(row, 3, 2);

    // Oracle: selection by repeated arg-max with lowest index on ties.
    std::vector<double> score(3);
    for (std::size_t k = 0; k < 3; ++k) {
      double pts = m.subscales()[k].bias;
      const auto& cols = m.subscale_columns(k);
      for (std::size_t i = 0; i < cols.size(); ++i) pts += m.subscales()[k].coefficients[i] * row[cols[i]];
      score[k] = m.weights()[k] / (1.0 + std::exp(-std::clamp(pts, -36.0, 36.0)));
    }
    std::vector<bool> used(3, false);
    REQUIRE(imp.size() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
      std::size_t best = 3;
      for (std::size_t k = 0; k < 3; ++k)
        if (!used[k] && (best == 3 || score[k] > score[best])) best = k;
      used[best] = true;
      REQUIRE(imp[r].subscale == best);
      REQUIRE(imp[r].weighted == doctest::Approx(score[best]).epsilon(1e-14));

      const auto& cols = m.subscale_columns(best);
      std::vector<std::pair<double, std::size_t>> active;
      for (std::size_t i = 0; i < cols.size(); ++i) {
        const double c = m.subscales()[best].coefficients[i] * row[cols[i]];
        if (c > 0) active.emplace_back(c, cols[i]);
      }
      std::vector<bool> taken(active.size(), false);
      const std::size_t n = std::min<std::size_t>(2, active.size());
      REQUIRE(imp[r].factors.size() == n);
      for (std::size_t f = 0; f < n; ++f) {
        std::size_t arg = active.size();
        for (std::size_t i = 0; i < active.size(); ++i)
          if (!taken[i] && (arg == active.size() || active[i].first > active[arg].first)) arg = i;
        taken[arg] = true;
        REQUIRE(imp[r].factors[f].column == active[arg].second);
        REQUIRE(imp[r].factors[f].contribution == active[arg].first);
      }
    }
  }
}

TEST_CASE("model construction enforces sign and partition constraints") {
  const auto spec = spec_10_50_75();
  CHECK_THROWS_AS(single_feature_model(spec, {-0.1, 0, 0, 0}), InvalidModel);
  CHECK_NOTHROW(single_feature_model(spec, {0, 0, 0, -0.5}));  // not-missing bit is free
  CHECK_THROWS_AS(single_feature_model(spec, {0, 0, 0, 0}, 0.0, -1.0), InvalidModel);
  CHECK_THROWS_AS(single_feature_model(spec, {0, 0, 0}), InvalidModel);
  const FeatureSpec none{"y", Monotonicity::None, {1, 2}, {}, false};
  CHECK_NOTHROW(ArmModel(Binarizer({none}), {Subscale{"S", {0}, {-1.0, -2.0}, 0}}, {1.0}, 0.0));
  const Binarizer two({spec, none});
  CHECK_THROWS_AS(ArmModel(two, {Subscale{"S", {0}, {0, 0, 0, 0}, 0}}, {1.0}, 0.0), InvalidModel);
  CHECK_THROWS_AS(ArmModel(two, {Subscale{"A", {0}, {0, 0, 0, 0}, 0}, Subscale{"B", {0, 1}, {0, 0, 0, 0, 0, 0}, 0}},
                           {1.0, 1.0}, 0.0),
                  InvalidModel);
}

TEST_CASE("serialization round-trips bit for bit") {
  SplitMix64 rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = support::random_model(rng, 6, 3);
    const auto back = deserialize_model(serialize_model(m));
    REQUIRE(back.subscale_count() == m.subscale_count());
    REQUIRE(back.bias() == m.bias());
    REQUIRE(back.weights() == m.weights());
    for (std::size_t k = 0; k < m.subscale_count(); ++k) {
      REQUIRE(back.subscales()[k].name == m.subscales()[k].name);
      REQUIRE(back.subscales()[k].features == m.subscales()[k].features);
      REQUIRE(back.subscales()[k].coefficients == m.subscales()[k].coefficients);
      REQUIRE(back.subscales()[k].bias == m.subscales()[k].bias);
    }
    for (std::size_t p = 0; p < m.feature_count(); ++p) {
      const auto& a = m.binarizer().specs()[p];
      const auto& b = back.binarizer().specs()[p];
      REQUIRE(a.name == b.name);
      REQUIRE(a.monotonicity == b.monotonicity);
      REQUIRE(a.thresholds == b.thresholds);
      REQUIRE(a.missing_codes == b.missing_codes);
      REQUIRE(a.include_not_missing_indicator == b.include_not_missing_indicator);
    }
    REQUIRE(model_hash(back) == model_hash(m));
  }
}

TEST_CASE("serialization: empty subscale, truncation and version checks") {
  const FeatureSpec s = spec_10_50_75();
  const ArmModel m(Binarizer({s}), {Subscale{"S", {0}, {0.1, 0.2, 0.3, 0.4}, 0.5}, Subscale{"Empty", {}, {}, -1.0}},
                   {1.0, 0.0}, 0.25);
  const auto back = deserialize_model(serialize_model(m));
  CHECK(back.subscale_count() == 2);
  CHECK(back.subscales()[1].features.empty());
  CHECK(back.subscales()[1].bias == -1.0);

  const std::string doc = serialize_model(m);
  CHECK_THROWS_AS(deserialize_model(doc.substr(0, doc.size() / 2)), MalformedDocument);
  CHECK_THROWS_AS(deserialize_model("{}"), MalformedDocument);
  auto j = nlohmann::json::parse(doc);
  j["schema_version"] = kModelSchemaVersion + 1;
  CHECK_THROWS_AS(deserialize_model(j.dump()), SchemaVersionMismatch);
}

TEST_CASE("model topology lists tables and weights") {
  SplitMix64 rng(43);
  const auto m = support::random_model(rng, 5, 2);
  const auto topo = model_topology(m);
  CHECK(topo.at("subscale_count") == 2);
  CHECK(topo.at("feature_count") == 5);
  CHECK(topo.at("scoring_tables").size() == 2);
  CHECK(topo.at("model_hash") == model_hash(m));
}
