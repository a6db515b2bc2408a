#include "arm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>

#include "arm/errors.hpp"
#include "arm/model.hpp"

namespace arm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Splits one CSV record, honouring double quotes. Returns false at EOF.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

}  // namespace

RawDataset RawDataset::subset(std::span<const std::size_t> indices) const {
  RawDataset out;
  out.columns = columns;
  out.rows.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.rows.push_back(rows.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

double RawDataset::positive_rate() const {
  if (labels.empty()) return 0.0;
  return static_cast<double>(std::count(labels.begin(), labels.end(), 1)) /
         static_cast<double>(labels.size());
}

RawDataset read_csv(std::istream& in, const Schema& schema) {
  std::vector<std::string> header;
  if (!read_record(in, header)) throw MissingColumn(schema.label_column);
  for (auto& h : header) h = trim(h);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t c = 0; c < header.size(); ++c) pos.emplace(header[c], c);

  auto find = [&](const std::string& name) {
    auto it = pos.find(name);
    if (it == pos.end()) throw MissingColumn(name);
    return it->second;
  };
  const std::size_t label_col = find(schema.label_column);
  std::vector<std::size_t> feature_cols;
  for (const auto& f : schema.features) feature_cols.push_back(find(f.name));

  RawDataset data;
  data.columns = schema.feature_names();
  std::vector<std::string> fields;
  std::size_t line = 0;
  while (read_record(in, fields)) {
    ++line;
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    if (fields.size() != header.size()) throw ColumnCountMismatch(header.size(), fields.size());

    const std::string label_text = trim(fields[label_col]);
    bool found = false;
    for (const auto& [text, value] : schema.label_map) {
      if (text == label_text) {
        data.labels.push_back(value);
        found = true;
        break;
      }
    }
    if (!found)
      throw UnknownLabelValue("unknown label '" + label_text + "' at row " + std::to_string(line));

    std::vector<double> row(schema.features.size());
    for (std::size_t p = 0; p < schema.features.size(); ++p) {
      const std::string cell = trim(fields[feature_cols[p]]);
      if (cell.empty() || cell == "NA" || cell == "nan" || cell == "NaN") {
        row[p] = kNaN;
        continue;
      }
      double v;
      if (!parse_double(cell, v)) throw UnparsableValue(line, schema.features[p].name, cell);
      row[p] = schema.features[p].is_missing(v) ? kNaN : v;
    }
    data.rows.push_back(std::move(row));
  }
  return data;
}

RawDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_csv(in, schema);
}

void write_csv(std::ostream& out, const RawDataset& data, const Schema& schema) {
  out << quote(schema.label_column);
  for (const auto& f : schema.features) out << ',' << quote(f.name);
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << quote(schema.label_name(data.labels[i]));
    for (double v : data.rows[i]) {
      out << ',';
      if (!std::isnan(v)) {
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        out.write(buf, res.ptr - buf);
      }
    }
    out << '\n';
  }
}

void save_csv(const std::string& path, const RawDataset& data, const Schema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  write_csv(out, data, schema);
}

bool same_values(const RawDataset& a, const RawDataset& b) {
  if (a.columns != b.columns || a.labels != b.labels || a.rows.size() != b.rows.size())
    return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    if (a.rows[i].size() != b.rows[i].size()) return false;
    for (std::size_t p = 0; p < a.rows[i].size(); ++p) {
      const double x = a.rows[i][p], y = b.rows[i][p];
      if (std::isnan(x) != std::isnan(y)) return false;
      if (!std::isnan(x) && std::bit_cast<std::uint64_t>(x) != std::bit_cast<std::uint64_t>(y))
        return false;
    }
  }
  return true;
}

// ---- synthetic --------------------------------------------------------------

double SyntheticFeature::cdf(double x) const {
  double total = 0.0;
  for (const auto& s : marginal) total += s.weight;
  double acc = 0.0;
  for (const auto& s : marginal) {
    if (x >= s.hi) {
      acc += s.weight;
    } else if (x > s.lo) {
      acc += s.weight * (x - s.lo) / (s.hi - s.lo);
    }
  }
  return total > 0 ? acc / total : 0.0;
}

SyntheticSpec fico_like_spec(std::size_t n, std::uint64_t seed) {
  using M = Monotonicity;
  struct Row {
    const char* name;
    M dir;
    std::vector<MarginalSegment> marginal;
    double coef;
    double missing;
  };
  // Ranges follow the HELOC data dictionary; coefficients give
  // ExternalRiskEstimate the dominant role it has in the real data.
  const std::vector<Row> rows = {
      {"ExternalRiskEstimate", M::Decreasing, {{33, 60, 1}, {60, 80, 5}, {80, 94, 2}}, 6.0, 0.0},
      {"MSinceOldestTradeOpen", M::Decreasing, {{2, 100, 2}, {100, 300, 5}, {300, 800, 1}}, 1.0, 0.02},
      {"MSinceMostRecentTradeOpen", M::Decreasing, {{0, 12, 6}, {12, 60, 2}, {60, 380, 0.3}}, 0.3, 0.0},
      {"AverageMInFile", M::Decreasing, {{4, 50, 2}, {50, 120, 5}, {120, 380, 1}}, 1.5, 0.0},
      {"NumSatisfactoryTrades", M::Decreasing, {{0, 10, 2}, {10, 35, 5}, {35, 80, 1}}, 1.5, 0.0},
      {"NumTrades60Ever2DerogPubRec", M::Increasing, {{0, 1, 8}, {1, 4, 2}, {4, 19, 0.3}}, 0.5, 0.0},
      {"NumTrades90Ever2DerogPubRec", M::Increasing, {{0, 1, 9}, {1, 4, 1.5}, {4, 19, 0.2}}, 0.3, 0.0},
      {"PercentTradesNeverDelq", M::Decreasing, {{0, 80, 1}, {80, 100, 6}}, 1.5, 0.0},
      {"MSinceMostRecentDelq", M::Decreasing, {{0, 24, 3}, {24, 83, 2}}, 0.5, 0.45},
      {"MaxDelq2PublicRecLast12M", M::Decreasing, {{0, 4, 1}, {4, 6, 2}, {6, 8, 6}}, 1.0, 0.0},
      {"MaxDelqEver", M::Decreasing, {{2, 5, 3}, {5, 8, 4}}, 0.5, 0.0},
      {"NumTotalTrades", M::None, {{0, 10, 2}, {10, 40, 5}, {40, 104, 1}}, 0.5, 0.0},
      {"NumTradesOpeninLast12M", M::Increasing, {{0, 3, 6}, {3, 19, 2}}, 0.5, 0.0},
      {"PercentInstallTrades", M::None, {{0, 60, 6}, {60, 100, 1}}, 0.3, 0.0},
      {"MSinceMostRecentInqexcl7days", M::Decreasing, {{0, 1, 5}, {1, 24, 3}}, 2.0, 0.2},
      {"NumInqLast6M", M::Increasing, {{0, 3, 7}, {3, 66, 2}}, 0.5, 0.0},
      {"NumInqLast6Mexcl7days", M::Increasing, {{0, 3, 7}, {3, 66, 2}}, 0.3, 0.0},
      {"NetFractionRevolvingBurden", M::Increasing, {{0, 30, 4}, {30, 100, 4}, {100, 232, 0.3}}, 2.5, 0.02},
      {"NetFractionInstallBurden", M::Increasing, {{0, 70, 3}, {70, 100, 3}, {100, 471, 0.3}}, 0.5, 0.35},
      {"NumRevolvingTradesWBalance", M::None, {{0, 5, 5}, {5, 32, 2}}, 0.3, 0.02},
      {"NumInstallTradesWBalance", M::None, {{0, 4, 6}, {4, 23, 1}}, 0.3, 0.08},
      {"NumBank2NatlTradesWHighUtilization", M::Increasing, {{0, 2, 6}, {2, 18, 2}}, 1.0, 0.06},
      {"PercentTradesWBalance", M::None, {{0, 50, 2}, {50, 100, 5}}, 0.3, 0.0},
  };
  SyntheticSpec spec;
  spec.n = n;
  spec.seed = seed;
  spec.missing_rate = 0.0;
  for (const auto& r : rows) {
    SyntheticFeature f;
    f.name = r.name;
    f.direction = r.dir;
    f.marginal = r.marginal;
    f.coefficient = r.coef;
    f.missing_rate = r.missing;
    f.integer = true;
    spec.features.push_back(std::move(f));
  }
  return spec;
}

namespace {

double sample_marginal(const SyntheticFeature& f, std::mt19937_64& rng) {
  double total = 0.0;
  for (const auto& s : f.marginal) total += s.weight;
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (const auto& s : f.marginal) {
    if (u < s.weight || &s == &f.marginal.back()) {
      const double x = std::uniform_real_distribution<double>(s.lo, s.hi)(rng);
      return f.integer ? std::floor(x) : x;
    }
    u -= s.weight;
  }
  return f.marginal.back().hi;
}

double shape(Monotonicity dir, double q) {
  switch (dir) {
    case Monotonicity::Decreasing:
      return 0.5 - q;
    case Monotonicity::Increasing:
      return q - 0.5;
    case Monotonicity::None:
      return std::abs(q - 0.5) - 0.25;
  }
  return 0.0;
}

RawDataset generate_once(const SyntheticSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RawDataset data;
  for (const auto& f : spec.features) data.columns.push_back(f.name);
  std::vector<double> logits(spec.n);
  data.rows.assign(spec.n, std::vector<double>(spec.features.size()));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < spec.n; ++i) {
    double z = 0.0;
    for (std::size_t p = 0; p < spec.features.size(); ++p) {
      const auto& f = spec.features[p];
      const double rate = f.missing_rate >= 0 ? f.missing_rate : spec.missing_rate;
      const bool missing = unit(rng) < rate;
      const double x = sample_marginal(f, rng);
      if (missing) {
        data.rows[i][p] = kNaN;
      } else {
        data.rows[i][p] = x;
        z += f.coefficient * shape(f.direction, f.cdf(x));
      }
    }
    logits[i] = z;
  }
  double intercept = spec.intercept;
  if (spec.auto_balance && spec.n > 0) {
    auto sorted = logits;
    auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    intercept -= *mid;
  }
  data.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double z = spec.logit_scale * (intercept + logits[i]);
    data.labels[i] = spec.deterministic ? (z > 0.0) : (unit(rng) < sigmoid(z));
  }
  return data;
}

}  // namespace

RawDataset generate_synthetic(const SyntheticSpec& spec) {
  for (const auto& f : spec.features)
    if (f.marginal.empty()) throw DegenerateSpec("feature " + f.name + " has no marginal");
  for (std::uint64_t attempt = 0; attempt < 10; ++attempt) {
    auto data = generate_once(spec, spec.seed + attempt * 0x9e3779b97f4a7c15ull);
    const double rate = data.positive_rate();
    if (rate > 0.0 && rate < 1.0) return data;
  }
  throw DegenerateSpec("synthetic spec produced a single class in 10 attempts");
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec) {
  using nlohmann::json;
  json features = json::array();
  for (const auto& f : spec.features) {
    json marginal = json::array();
    for (const auto& s : f.marginal) marginal.push_back({s.lo, s.hi, s.weight});
    features.push_back({{"name", f.name},
                        {"direction", std::string(to_string(f.direction))},
                        {"marginal", marginal},
                        {"coefficient", f.coefficient},
                        {"missing_rate", f.missing_rate},
                        {"integer", f.integer}});
  }
  return json{{"n", spec.n},
              {"seed", spec.seed},
              {"missing_rate", spec.missing_rate},
              {"intercept", spec.intercept},
              {"auto_balance", spec.auto_balance},
              {"logit_scale", spec.logit_scale},
              {"deterministic", spec.deterministic},
              {"features", features}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  try {
    SyntheticSpec spec;
    if (j.contains("features")) {
      for (const auto& jf : j.at("features")) {
        SyntheticFeature f;
        f.name = jf.at("name").get<std::string>();
        f.direction = monotonicity_from_string(jf.value("direction", std::string("none")));
        for (const auto& s : jf.at("marginal"))
          f.marginal.push_back({s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()});
        f.coefficient = jf.value("coefficient", 1.0);
        f.missing_rate = jf.value("missing_rate", -1.0);
        f.integer = jf.value("integer", true);
        spec.features.push_back(std::move(f));
      }
    } else {
      spec = fico_like_spec(spec.n, spec.seed);
    }
    spec.n = j.value("n", spec.n);
    spec.seed = j.value("seed", spec.seed);
    spec.missing_rate = j.value("missing_rate", spec.missing_rate);
    spec.intercept = j.value("intercept", spec.intercept);
    spec.auto_balance = j.value("auto_balance", spec.auto_balance);
    spec.logit_scale = j.value("logit_scale", spec.logit_scale);
    spec.deterministic = j.value("deterministic", spec.deterministic);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedDocument(std::string("synthetic spec: ") + e.what());
  }
}

// ---- splits -----------------------------------------------------------------

std::vector<Split> make_splits(std::span<const std::uint8_t> labels, double test_frac,
                               std::size_t n_splits, std::uint64_t seed, bool stratified) {
  const std::size_t n = labels.size();
  if (n < 10) throw Error("need at least 10 rows to split");
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0 || pos == n) throw SingleClassDataset();
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw Error("test_frac must be in (0, 1)");

  std::mt19937_64 rng(seed);
  std::vector<Split> splits;
  for (std::size_t s = 0; s < n_splits; ++s) {
    Split split;
    auto take = [&](std::vector<std::size_t> idx) {
      std::shuffle(idx.begin(), idx.end(), rng);
      const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(idx.size())));
      split.test.insert(split.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
      split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    };
    if (stratified) {
      std::vector<std::size_t> a, b;
      for (std::size_t i = 0; i < n; ++i) (labels[i] ? a : b).push_back(i);
      take(std::move(a));
      take(std::move(b));
    } else {
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), std::size_t{0});
      take(std::move(all));
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    splits.push_back(std::move(split));
  }
  return splits;
}

}  // namespace arm
