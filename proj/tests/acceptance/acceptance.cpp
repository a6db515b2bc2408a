// Acceptance checks: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>

#include "arm/cases.hpp"
#include "arm/dataset.hpp"
#include "arm/errors.hpp"
#include "arm/explain_db.hpp"
#include "arm/model_io.hpp"
#include "arm/service.hpp"
#include "arm/train.hpp"
#include "test_support.hpp"

using namespace arm;
using nlohmann::json;
using support::SplitMix64;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
  std::size_t exact_instances = 500;
  std::size_t audit_n = 5000;
  std::size_t audit_rows = 1000;
  std::size_t trend_n = 10459;
  std::size_t trend_rows = 400;
  std::size_t e2e_requests = 100;
  std::uint64_t seed = 2024;
  std::vector<std::string> only;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::min(v.size(), std::max<std::size_t>(rank, 1)) - 1];
}

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < std::min(k, n); ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(std::min(k, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---- set-cover exactness ----------------------------------------------------

Outcome setcover_exactness(const Options& o) {
  SplitMix64 rng(o.seed ^ 0x5e7c0);
  std::size_t solved = 0, infeasible = 0, sparsity_mismatch = 0, support_mismatch = 0, slow = 0, inexact = 0;
  double worst = 0.0;
  while (solved < o.exact_instances) {
    const std::size_t originals = 3 + rng.below(13);
    const std::size_t rows = 10 + rng.below(191);
    const auto inst = support::random_cover_instance(rng, originals, rows);
    const ExplainData data(inst.X, inst.labels);
    const support::CoverOracle oracle(data.X, data.labels, inst.query, inst.label);
    const auto start = Clock::now();
    std::optional<ExplainContext> ctx;
    try {
      ctx = build_context(inst.query, inst.label, data);
    } catch (const InfeasibleExplanation&) {
    }
    if (!ctx) {
      if (oracle.feasible()) ++sparsity_mismatch;
      ++infeasible;
      continue;
    }
    if (!oracle.feasible()) {
      ++sparsity_mismatch;
      ++solved;
      continue;
    }
    const auto sparse = solve_max_sparsity(*ctx);
    inexact += !sparse.exact;
    if (sparse.sparsity() != oracle.min_sparsity()) ++sparsity_mismatch;
    for (std::size_t extra = 0; extra <= 2; ++extra) {
      const std::size_t cap = sparse.sparsity() + extra;
      const auto s = solve_max_support(*ctx, cap);
      inexact += !s.exact;
      if (s.support != *oracle.max_support(cap)) ++support_mismatch;
    }
    const double t = seconds_since(start);
    worst = std::max(worst, t);
    slow += t >= 1.0;
    ++solved;
  }
  std::ostringstream d;
  d << solved << " instances (+" << infeasible << " infeasible, agreed), sparsity mismatches " << sparsity_mismatch
    << ", support mismatches " << support_mismatch << ", inexact " << inexact << ", slowest " << worst * 1e3
    << " ms";
  return {sparsity_mismatch == 0 && support_mismatch == 0 && inexact == 0 && slow == 0, d.str()};
}

// ---- consistency audit ------------------------------------------------------

struct RuleSetStats {
  std::size_t rows = 0;
  std::size_t failed_verification = 0;
  std::size_t non_monotone = 0;
  std::size_t infeasible = 0;
  std::size_t inexact = 0;
  double sparsity_sum_plus0 = 0;
  std::array<std::size_t, 3> low_support{};  ///< support < 10 at +0, +1, +2
  double max_seconds = 0;
  double total_seconds = 0;
};

RuleSetStats rule_sets_for_rows(const ArmModel& model, const ExplainData& data, const std::vector<std::size_t>& rows,
                                ExplanationDb* db) {
  RuleSetStats st;
  for (std::size_t i : rows) {
    const auto start = Clock::now();
    const auto q = data.X.row(i);
    DbEntry entry;
    entry.pattern.assign(q.begin(), q.end());
    entry.label = data.labels[i];
    try {
      const auto ctx = build_context(q, data.labels[i], data);
      entry.rules = compute_rule_set(ctx, SolverBudget{});
    } catch (const InfeasibleExplanation& e) {
      ++st.infeasible;
      entry.error = e.what();
    }
    const double t = seconds_since(start);
    st.max_seconds = std::max(st.max_seconds, t);
    st.total_seconds += t;
    ++st.rows;
    if (db) db->put(entry);
    if (!entry.error.empty()) continue;
    bool ok = true;
    for (const auto& r : entry.rules) {
      const auto v = verify_rule(*r, data, q);
      ok = ok && v.ok() && v.counterexamples.empty() && v.support == r->support && r->label == model.label_binary(q);
      st.inexact += !r->exact;
    }
    st.failed_verification += !ok;
    const auto& rs = entry.rules;
    st.non_monotone += !(rs[1]->support <= rs[2]->support && rs[2]->support <= rs[3]->support);
    st.sparsity_sum_plus0 += static_cast<double>(rs[1]->sparsity());
    for (std::size_t k = 0; k < 3; ++k) st.low_support[k] += rs[k + 1]->support < 10;
  }
  return st;
}

Outcome consistency_audit(const Options& o) {
  const auto train = generate_synthetic(fico_like_spec(o.audit_n, o.seed + 1));
  const auto model = fit_model(fico_schema(), train, TrainConfig{}).model;
  const auto data = make_explain_data(model, binarize_dataset(model.binarizer(), train.rows));
  const auto rows = sample_rows(data.rows(), o.audit_rows, o.seed + 2);
  const auto st = rule_sets_for_rows(model, data, rows, nullptr);
  std::ostringstream d;
  d << st.rows << " rows of N=" << o.audit_n << ": verification failures " << st.failed_verification
    << ", monotonicity violations " << st.non_monotone << ", infeasible " << st.infeasible << ", budget-limited rules "
    << st.inexact << ", mean " << st.total_seconds / std::max<std::size_t>(1, st.rows) << " s";
  return {st.rows == rows.size() && st.failed_verification == 0 && st.non_monotone == 0 && st.infeasible == 0,
          d.str()};
}

// ---- trend on the full-size dataset, shared with the end-to-end demo ----------

struct TrendRun {
  RawDataset data;
  ArmModel model;
  ExplanationDb db;
  std::vector<std::size_t> rows;
  RuleSetStats stats;
};

TrendRun& trend_run(const Options& o) {
  static std::optional<TrendRun> run;
  if (!run) {
    run.emplace();
    run->data = generate_synthetic(fico_like_spec(o.trend_n, o.seed + 3));
    run->model = fit_model(fico_schema(), run->data, TrainConfig{}).model;
    const auto ed = make_explain_data(run->model, binarize_dataset(run->model.binarizer(), run->data.rows));
    run->db.set_keys(model_hash(run->model), ed.hash);
    run->rows = sample_rows(ed.rows(), o.trend_rows, o.seed + 4);
    run->stats = rule_sets_for_rows(run->model, ed, run->rows, &run->db);
  }
  return *run;
}

Outcome support_trend(const Options& o) {
  const auto& st = trend_run(o).stats;
  const std::size_t n = st.rows - st.infeasible;
  const double mean = st.sparsity_sum_plus0 / static_cast<double>(std::max<std::size_t>(1, n));
  std::array<double, 3> frac{};
  for (std::size_t k = 0; k < 3; ++k) frac[k] = static_cast<double>(st.low_support[k]) / static_cast<double>(std::max<std::size_t>(1, n));
  const bool sparsity_ok = mean >= 2.5 && mean <= 3.5;
  const bool trend_ok = frac[0] > frac[1] && frac[1] > frac[2];
  const bool time_ok = st.max_seconds < 7.0;
  char buf[400];
  std::snprintf(buf, sizeof buf,
                "%zu rows of N=%zu: mean sparsity at +0 %.3f [%s], support<10 fraction %.2f%% -> %.2f%% -> %.2f%% [%s], "
                "max time %.2f s [%s], budget-limited rules %zu",
                st.rows, o.trend_n, mean, sparsity_ok ? "ok" : "out of range", 100 * frac[0], 100 * frac[1],
                100 * frac[2], trend_ok ? "strictly decreasing" : "not strictly decreasing", st.max_seconds,
                time_ok ? "ok" : "too slow", st.inexact);
  return {sparsity_ok && trend_ok && time_ok && st.failed_verification == 0, buf};
}

// ---- monotonicity and piecewise rewrite ------------------------------------------

Outcome monotonicity_suite(const Options& o) {
  SplitMix64 rng(o.seed ^ 0x3017);
  std::size_t violations = 0, checks = 0;
  for (int m = 0; m < 100; ++m) {
    const std::size_t P = 3 + rng.below(8);
    const auto model = support::random_model(rng, P, 1 + rng.below(std::min<std::size_t>(P, 4)));
    for (int r = 0; r < 100; ++r) {
      auto row = support::random_row(rng, model.binarizer());
      for (std::size_t p = 0; p < P; ++p) {
        const auto& spec = model.binarizer().specs()[p];
        if (spec.monotonicity == Monotonicity::None) continue;
        std::vector<double> grid;
        for (double v = -10; v <= 110; v += 1.0) grid.push_back(v);
        for (double t : spec.thresholds) grid.insert(grid.end(), {t - 1e-9, t, t + 1e-9});
        std::sort(grid.begin(), grid.end());
        auto sweep = row;
        double prev = 0;
        bool first = true;
        for (double v : grid) {
          if (spec.is_missing(v)) continue;
          sweep[p] = v;
          const double prob = model.predict(sweep).probability;
          if (!first) {
            ++checks;
            if (spec.monotonicity == Monotonicity::Decreasing ? prob > prev : prob < prev) ++violations;
          }
          prev = prob;
          first = false;
        }
      }
    }
  }
  return {violations == 0, std::to_string(checks) + " adjacent grid comparisons, " + std::to_string(violations) + " violations"};
}

Outcome piecewise_rewrite(const Options& o) {
  SplitMix64 rng(o.seed ^ 0x71ece);
  std::size_t mismatches = 0, checks = 0;
  for (int m = 0; m < 50; ++m) {
    const std::size_t P = 2 + rng.below(8);
    const auto model = support::random_model(rng, P, 1 + rng.below(std::min<std::size_t>(P, 3)));
    for (std::size_t p = 0; p < P; ++p) {
      const auto table = model.scoring_table(model.subscale_of_feature(p), p);
      for (int g = 0; g < 1000; ++g) {
        const double v = -20.0 + 140.0 * g / 999.0;
        ++checks;
        mismatches += table.lookup(v) != model.feature_points(p, v);
      }
    }
  }
  return {mismatches == 0, std::to_string(checks) + " grid points over 50 models, " + std::to_string(mismatches) + " mismatches"};
}

// ---- training ---------------------------------------------------------------

Outcome training_correctness(const Options& o) {
  SplitMix64 rng(o.seed ^ 0x7a1);
  double worst_logistic = 0, worst_joint = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dim = 1 + rng.below(8);
    const auto d = support::random_logistic_data(rng, 5 + rng.below(20), dim);
    const double lambda = rng.uniform(0.0, 2.0);
    std::vector<double> theta(dim + 1);
    for (auto& t : theta) t = 2.0 * rng.normal();
    std::vector<double> g(dim + 1);
    logistic_objective(d, lambda, theta, g);
    const auto fd = support::numeric_gradient(
        [&](const std::vector<double>& t) { return support::direct_logistic_loss(d, lambda, t); }, theta);
    worst_logistic = std::max(worst_logistic, support::relative_error(g, fd));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const auto model = support::random_model(rng, 4, 2);
    std::vector<std::vector<double>> rows;
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < 40; ++i) {
      rows.push_back(support::random_row(rng, model.binarizer()));
      labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
    }
    const JointObjective obj(model, binarize_dataset(model.binarizer(), rows), labels, rng.uniform(), rng.uniform());
    const auto theta = obj.pack(model);
    std::vector<double> g(obj.dim()), scratch(obj.dim());
    obj(theta, g);
    const auto fd = support::numeric_gradient([&](const std::vector<double>& t) { return obj(t, scratch); }, theta);
    worst_joint = std::max(worst_joint, support::relative_error(g, fd));
  }

  // post-fit signs on random datasets
  std::size_t negative = 0, fits = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto truth = support::random_model(rng, 5, 2);
    RawDataset data;
    for (int i = 0; i < 400; ++i) {
      data.rows.push_back(support::random_row(rng, truth.binarizer()));
      data.labels.push_back(rng.bernoulli(truth.predict(data.rows.back()).probability) ? 1 : 0);
    }
    Schema schema;
    schema.features = truth.binarizer().specs();
    for (const auto& s : truth.subscales()) {
      SubscaleDef def{s.name, {}};
      for (std::size_t p : s.features) def.features.push_back(schema.features[p].name);
      schema.subscales.push_back(def);
    }
    for (double alpha : {0.0, 0.5}) {
      TrainConfig c;
      c.joint_alpha = alpha;
      const auto fitted = fit_model(schema, data, c).model;
      ++fits;
      for (std::size_t k = 0; k < fitted.subscale_count(); ++k) {
        const auto& cols = fitted.subscale_columns(k);
        for (std::size_t j = 0; j < cols.size(); ++j)
          if (fitted.binarizer().is_constrained(cols[j]) && fitted.subscales()[k].coefficients[j] < 0) ++negative;
      }
      for (double w : fitted.weights()) negative += w < 0;
    }
  }

  // separable toy
  Schema toy;
  toy.features = {FeatureSpec{"x", Monotonicity::Decreasing, {50}, {}, false}};
  toy.subscales = {{"S", {"x"}}};
  RawDataset sep;
  for (int i = 0; i < 20; ++i) {
    sep.rows.push_back({5.0 * i});
    sep.labels.push_back(5.0 * i < 50 ? 1 : 0);
  }
  const double toy_acc = fit_model(toy, sep, TrainConfig{}).report.train_accuracy;

  char buf[300];
  std::snprintf(buf, sizeof buf,
                "max relative gradient error %.2e (logistic), %.2e (joint); %zu negative constrained coefficients "
                "over %zu fits; separable toy accuracy %.3f",
                worst_logistic, worst_joint, negative, fits, toy_acc);
  return {worst_logistic < 1e-5 && worst_joint < 1e-5 && negative == 0 && toy_acc == 1.0, buf};
}

Outcome accuracy_parity(const Options& o) {
  const auto start = Clock::now();
  const auto data = generate_synthetic(fico_like_spec(10000, o.seed + 5));
  const auto r = evaluate(fico_schema(), data, TrainConfig{}, 5, 0.2, 7);
  const double secs = seconds_since(start);
  const bool ok = r.arm.mean >= r.logistic.mean - 0.01 && r.arm.mean >= r.majority.mean + 0.15 &&
                  r.logistic.mean >= r.majority.mean + 0.15 && secs < 120.0;
  char buf[300];
  std::snprintf(buf, sizeof buf, "5 x 80/20 on N=10000: model %.4f, logistic %.4f, majority %.4f, %.1f s", r.arm.mean,
                r.logistic.mean, r.majority.mean, secs);
  return {ok, buf};
}

// ---- end to end -------------------------------------------------------------

Outcome end_to_end(const Options& o) {
  auto& run = trend_run(o);
  const Schema schema = schema_of(run.model, fico_schema());
  Service service(run.model, run.data, ExplanationDb::from_json(run.db.to_json()), schema);
  httplib::Server server;
  service.register_routes(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  if (port <= 0) return {false, "cannot bind a port"};
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(60);

  const ExplainData& ed = *service.explain_data();
  std::vector<double> t_predict, t_explain, t_cases;
  std::size_t errors = 0, outliers = 0, case_violations = 0, cases_checked = 0;
  const auto timed = [&](const std::string& path, const std::string& body, std::vector<double>& times) {
    const auto start = Clock::now();
    auto res = cli.Post(path, body, "application/json");
    times.push_back(seconds_since(start));
    return res;
  };
  if (auto m = cli.Get("/model"); !m || m->status != 200) ++errors;
  // Alternate rows held in the db with rows outside it, which are solved live.
  const std::set<std::size_t> in_db(run.rows.begin(), run.rows.end());
  std::vector<std::size_t> outside;
  for (std::size_t i : sample_rows(run.data.size(), 2 * o.e2e_requests + in_db.size(), o.seed + 6))
    if (!in_db.count(i)) outside.push_back(i);
  std::size_t live = 0;
  for (std::size_t k = 0; k < o.e2e_requests; ++k) {
    const bool from_db = k % 2 == 0 && k / 2 < run.rows.size();
    const std::size_t i = from_db ? run.rows[(k / 2) * run.rows.size() / ((o.e2e_requests + 1) / 2)]
                                  : outside[(k * 7919) % outside.size()];
    live += !from_db;
    json fs = json::object();
    for (std::size_t p = 0; p < schema.features.size(); ++p)
      fs[schema.features[p].name] = std::isnan(run.data.rows[i][p]) ? json("missing") : json(run.data.rows[i][p]);
    const std::string body = json{{"features", fs}}.dump();

    auto p = timed("/predict", body, t_predict);
    if (!p || p->status != 200) ++errors;
    auto e = timed("/explain", body, t_explain);
    if (!e || (e->status != 200 && e->status != 422)) ++errors;
    if (e && e->status == 422) ++outliers;
    auto c = timed("/cases", body, t_cases);
    if (!c || (c->status != 200 && c->status != 422)) {
      ++errors;
      continue;
    }
    if (c->status != 200) continue;
    const auto j = json::parse(c->body);
    const auto rule = rule_from_json(j.at("rule"));
    for (const auto& cs : j.at("cases")) {
      const auto row = ed.X.row(cs.at("row").get<std::size_t>());
      ++cases_checked;
      for (std::size_t f : rule.features) case_violations += !row[f];
    }
  }
  server.stop();
  th.join();
  const double p95_explain = percentile(t_explain, 0.95), p95_predict = percentile(t_predict, 0.95);
  char buf[400];
  std::snprintf(buf, sizeof buf,
                "%zu requests each (%zu solved live): /predict p95 %.2f ms, /explain p95 %.3f s, /cases p95 %.3f s, "
                "%zu cases checked, %zu rule violations, %zu outliers, %zu errors",
                t_predict.size(), live, 1e3 * p95_predict, p95_explain, percentile(t_cases, 0.95), cases_checked,
                case_violations, outliers, errors);
  return {errors == 0 && case_violations == 0 && p95_explain < 7.0 && p95_predict < 0.010 && cases_checked > 0, buf};
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Acceptance checks"};
  app.add_option("--exact-instances", o.exact_instances);
  app.add_option("--audit-n", o.audit_n);
  app.add_option("--audit-rows", o.audit_rows);
  app.add_option("--trend-n", o.trend_n);
  app.add_option("--trend-rows", o.trend_rows, "Random rows explained for the trend check");
  app.add_option("--e2e-requests", o.e2e_requests);
  app.add_option("--seed", o.seed);
  app.add_option("--only", o.only, "Run only these checks");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> checks = {
      {"setcover-exactness", setcover_exactness}, {"consistency-audit", consistency_audit},
      {"support-trend", support_trend},               {"monotonicity", monotonicity_suite},
      {"piecewise-rewrite", piecewise_rewrite},   {"training-correctness", training_correctness},
      {"accuracy-parity", accuracy_parity},       {"end-to-end", end_to_end},
  };
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    if (!o.only.empty() && std::find(o.only.begin(), o.only.end(), name) == o.only.end()) continue;
    const auto start = Clock::now();
    Outcome r;
    try {
      r = fn(o);
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += !r.pass;
    std::printf("%s %s: %s (%.1f s)\n", r.pass ? "PASS" : "FAIL", name.c_str(), r.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
