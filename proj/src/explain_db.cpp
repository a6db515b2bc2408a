#include "arm/explain_db.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "arm/errors.hpp"
#include "arm/model_io.hpp"

namespace arm {

using nlohmann::json;

std::string_view rule_setting_name(std::size_t setting) {
  static constexpr std::array<std::string_view, kRuleSettings> names = {
      "max_sparsity", "max_support+0", "max_support+1", "max_support+2"};
  return names.at(setting);
}

std::string_view to_string(ExplainStep step) {
  switch (step) {
    case ExplainStep::DbHit: return "db-hit";
    case ExplainStep::MaxSparsity: return "max-sparsity";
    case ExplainStep::MaxSupport0: return "max-support+0";
    case ExplainStep::MaxSupport1: return "max-support+1";
    case ExplainStep::MaxSupport2: return "max-support+2";
  }
  return "unknown";
}

namespace {

/// Budget left of `total` since `start`; at least 1 ms so warm starts survive.
SolverBudget remaining(const SolverBudget& total, std::chrono::steady_clock::time_point start) {
  SolverBudget b = total;
  const auto used = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
  b.time_limit = std::max(std::chrono::milliseconds(1), total.time_limit - used);
  return b;
}

}  // namespace

RuleSet compute_rule_set(const ExplainContext& ctx, const SolverBudget& budget) {
  const auto start = std::chrono::steady_clock::now();
  RuleSet out;
  out[0] = solve_max_sparsity(ctx, {remaining(budget, start), true});
  const std::size_t base = out[0]->sparsity();
  for (std::size_t r = 0; r + 1 < kRuleSettings; ++r)
    out[r + 1] = solve_max_support(ctx, base + r, remaining(budget, start), &*out[r]);
  return out;
}

// ---- db ---------------------------------------------------------------------

ExplanationDb::ExplanationDb() : mutex_(std::make_unique<std::shared_mutex>()) {}

ExplanationDb::ExplanationDb(std::string model_hash, std::uint64_t dataset_hash)
    : mutex_(std::make_unique<std::shared_mutex>()),
      model_hash_(std::move(model_hash)),
      dataset_hash_(dataset_hash) {}

ExplanationDb::ExplanationDb(ExplanationDb&& other) noexcept
    : mutex_(std::make_unique<std::shared_mutex>()),
      model_hash_(std::move(other.model_hash_)),
      dataset_hash_(other.dataset_hash_),
      entries_(std::move(other.entries_)) {}

ExplanationDb& ExplanationDb::operator=(ExplanationDb&& other) noexcept {
  if (this != &other) {
    std::unique_lock lock(*mutex_);
    model_hash_ = std::move(other.model_hash_);
    dataset_hash_ = other.dataset_hash_;
    entries_ = std::move(other.entries_);
  }
  return *this;
}

std::string ExplanationDb::model_hash() const {
  std::shared_lock lock(*mutex_);
  return model_hash_;
}

std::uint64_t ExplanationDb::dataset_hash() const {
  std::shared_lock lock(*mutex_);
  return dataset_hash_;
}

void ExplanationDb::set_keys(std::string model_hash, std::uint64_t dataset_hash) {
  std::unique_lock lock(*mutex_);
  model_hash_ = std::move(model_hash);
  dataset_hash_ = dataset_hash;
}

bool ExplanationDb::matches(const std::string& model_hash, std::uint64_t dataset_hash) const {
  std::shared_lock lock(*mutex_);
  return model_hash_ == model_hash && dataset_hash_ == dataset_hash;
}

std::size_t ExplanationDb::size() const {
  std::shared_lock lock(*mutex_);
  return entries_.size();
}

std::string ExplanationDb::key_of(std::span<const std::uint8_t> pattern) {
  std::string key(pattern.size(), '0');
  for (std::size_t j = 0; j < pattern.size(); ++j)
    if (pattern[j]) key[j] = '1';
  return key;
}

std::optional<DbEntry> ExplanationDb::find(std::span<const std::uint8_t> pattern) const {
  const auto key = key_of(pattern);
  std::shared_lock lock(*mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ExplanationDb::put(DbEntry entry) {
  auto key = key_of(entry.pattern);
  std::unique_lock lock(*mutex_);
  entries_.insert_or_assign(std::move(key), std::move(entry));
}

void ExplanationDb::erase(std::span<const std::uint8_t> pattern) {
  const auto key = key_of(pattern);
  std::unique_lock lock(*mutex_);
  entries_.erase(key);
}

void ExplanationDb::clear() {
  std::unique_lock lock(*mutex_);
  entries_.clear();
}

std::vector<DbEntry> ExplanationDb::entries() const {
  std::shared_lock lock(*mutex_);
  std::vector<DbEntry> out;
  out.reserve(entries_.size());
  for (const auto& [k, e] : entries_) out.push_back(e);
  return out;
}

std::optional<Rule> ExplanationDb::lookup(std::span<const std::uint8_t> pattern, std::size_t threshold) const {
  const auto key = key_of(pattern);
  std::shared_lock lock(*mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  const Rule* best = nullptr;
  for (const auto& r : it->second.rules) {
    if (!r || r->support <= threshold) continue;
    if (!best || r->sparsity() < best->sparsity() ||
        (r->sparsity() == best->sparsity() && r->support > best->support))
      best = &*r;
  }
  if (!best) return std::nullopt;
  return *best;
}

json ExplanationDb::to_json() const {
  std::shared_lock lock(*mutex_);
  json entries = json::array();
  for (const auto& [key, e] : entries_) {
    json rules = json::array();
    for (const auto& r : e.rules) rules.push_back(r ? rule_to_json(*r) : json(nullptr));
    json je{{"pattern", key}, {"label", e.label}, {"rules", rules}};
    if (!e.error.empty()) je["error"] = e.error;
    entries.push_back(std::move(je));
  }
  return json{{"format", "arm-explanation-db"},
              {"version", kVersion},
              {"model_hash", model_hash_},
              {"dataset_hash", hex64(dataset_hash_)},
              {"entries", std::move(entries)}};
}

ExplanationDb ExplanationDb::from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "arm-explanation-db")
      throw MalformedDocument("not an explanation db");
    if (j.at("version").get<int>() != kVersion)
      throw SchemaVersionMismatch("explanation db version " + j.at("version").dump() + ", expected " +
                                  std::to_string(kVersion));
    ExplanationDb db(j.at("model_hash").get<std::string>(),
                     std::stoull(j.at("dataset_hash").get<std::string>(), nullptr, 16));
    for (const auto& je : j.at("entries")) {
      DbEntry e;
      for (char ch : je.at("pattern").get<std::string>()) {
        if (ch != '0' && ch != '1') throw MalformedDocument("bad pattern character");
        e.pattern.push_back(ch == '1');
      }
      e.label = je.at("label").get<std::uint8_t>();
      e.error = je.value("error", std::string());
      const auto& rules = je.at("rules");
      if (rules.size() != kRuleSettings) throw MalformedDocument("entry must hold four rule slots");
      for (std::size_t s = 0; s < kRuleSettings; ++s)
        if (!rules[s].is_null()) e.rules[s] = rule_from_json(rules[s]);
      db.put(std::move(e));
    }
    return db;
  } catch (const json::exception& e) {
    throw MalformedDocument(std::string("bad explanation db: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw MalformedDocument("bad dataset hash");
  }
}

void ExplanationDb::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    out << to_json().dump();
    if (!out) throw Error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot rename " + tmp + " to " + path);
}

ExplanationDb ExplanationDb::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw MalformedDocument(std::string("bad explanation db: ") + e.what());
  }
  return from_json(j);
}

// ---- building ---------------------------------------------------------------

std::vector<std::vector<std::uint8_t>> sample_random_patterns(const Binarizer& binarizer,
                                                              const BinarizedMatrix& X,
                                                              std::size_t n, std::uint64_t seed) {
  const std::size_t P = binarizer.original_count();
  if (X.originals() != P) throw ColumnCountMismatch(P, X.originals());
  std::vector<double> rate(P, 0.0);
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < P; ++j) rate[j] += X(i, j);
  for (auto& r : rate) r = X.rows() ? r / static_cast<double>(X.rows()) : 0.5;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<std::uint8_t> row(2 * P, 0);
    for (std::size_t f = 0; f < binarizer.feature_count(); ++f) {
      const auto& spec = binarizer.specs()[f];
      const std::size_t off = binarizer.feature_offset(f);
      const std::size_t nt = spec.thresholds.size();
      double present = 1.0;
      if (spec.include_not_missing_indicator) {
        present = rate[off + nt];
        row[off + nt] = unit(rng) < present;
        if (!row[off + nt]) continue;
      }
      // threshold bits conditional on the value being present
      for (std::size_t t = 0; t < nt; ++t) {
        const double p = present > 0 ? std::min(1.0, rate[off + t] / present) : 0.0;
        row[off + t] = unit(rng) < p;
      }
      // nesting: 1[x < t] is non-decreasing in t, 1[x > t] non-increasing
      if (spec.monotonicity == Monotonicity::Increasing) {
        std::size_t last = nt;
        for (std::size_t t = 0; t < nt; ++t)
          if (row[off + t]) last = t;
        if (last < nt)
          for (std::size_t t = 0; t <= last; ++t) row[off + t] = 1;
      } else {
        std::size_t first = nt;
        for (std::size_t t = 0; t < nt && first == nt; ++t)
          if (row[off + t]) first = t;
        for (std::size_t t = first; t < nt; ++t) row[off + t] = 1;
      }
    }
    for (std::size_t j = 0; j < P; ++j) row[P + j] = 1 - row[j];
    out.push_back(std::move(row));
  }
  return out;
}

json DbBuildReport::to_json() const {
  return json{{"targets", targets}, {"solved", solved},  {"reused", reused},
              {"stale", stale},     {"failed", failed},  {"failures", failures}};
}

namespace {

bool entry_verifies(const DbEntry& e, const ExplainData& data) {
  for (const auto& r : e.rules)
    if (r && (r->label != e.label || !verify_rule(*r, data, e.pattern).ok())) return false;
  return true;
}

}  // namespace

DbBuildReport build_explanation_db(ExplanationDb& db, const ArmModel& model, const ExplainData& data,
                                   const std::string& model_hash, const DbBuildSettings& settings) {
  DbBuildReport report;
  if (!db.matches(model_hash, data.hash)) {
    for (const auto& e : db.entries())
      if (!entry_verifies(e, data)) ++report.stale;
    db.clear();
    db.set_keys(model_hash, data.hash);
  }

  std::vector<std::vector<std::uint8_t>> targets;
  std::set<std::vector<std::uint8_t>> seen;
  auto add = [&](std::span<const std::uint8_t> p) {
    std::vector<std::uint8_t> v(p.begin(), p.end());
    if (seen.insert(v).second) targets.push_back(std::move(v));
  };
  if (settings.include_rows) {
    if (settings.rows.empty())
      for (std::size_t i = 0; i < data.rows(); ++i) add(data.X.row(i));
    else
      for (std::size_t i : settings.rows) add(data.X.row(i));
  }
  if (settings.n_random > 0)
    for (const auto& p : sample_random_patterns(model.binarizer(), data.X, settings.n_random, settings.seed))
      add(p);
  report.targets = targets.size();

  std::mutex report_mutex;
  std::atomic<std::size_t> next{0}, done{0};
  auto work = [&] {
    for (std::size_t t; (t = next++) < targets.size();) {
      const auto& pattern = targets[t];
      bool reused = false, stale = false;
      if (auto cached = db.find(pattern)) {
        if (entry_verifies(*cached, data))
          reused = true;
        else
          stale = true;
      }
      std::string failure;
      if (!reused) {
        DbEntry e;
        e.pattern = pattern;
        e.label = model.label_binary(pattern);
        try {
          const auto ctx = build_context(pattern, e.label, data);
          e.rules = compute_rule_set(ctx, settings.budget);
        } catch (const Error& err) {
          e.error = err.what();
          failure = err.what();
        }
        db.put(std::move(e));
      }
      std::lock_guard lock(report_mutex);
      if (reused) ++report.reused;
      if (stale) ++report.stale;
      if (!reused && failure.empty()) ++report.solved;
      if (!failure.empty()) {
        ++report.failed;
        report.failures.push_back("pattern " + std::to_string(t) + ": " + failure);
      }
      const std::size_t d = ++done;
      if (settings.progress) settings.progress(d, targets.size());
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(settings.threads, targets.size()));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  return report;
}

// ---- cascade ----------------------------------------------------------------

Explanation explain(std::span<const std::uint8_t> query, std::uint8_t label, const ExplainData& data,
                    ExplanationDb* db, const ExplainSettings& settings) {
  const auto start = std::chrono::steady_clock::now();
  Explanation out;
  std::optional<ExplainContext> ctx;
  auto context = [&]() -> const ExplainContext& {
    if (!ctx) ctx = build_context(query, label, data);
    return *ctx;
  };
  auto solve = [&](auto& self, std::size_t s) -> const Rule& {
    if (!out.computed[s]) {
      if (s == 0) {
        out.computed[0] = solve_max_sparsity(context(), {remaining(settings.budget, start), true});
      } else {
        const Rule& prev = self(self, s - 1);
        const std::size_t cap = self(self, 0).sparsity() + (s - 1);
        out.computed[s] = solve_max_support(context(), cap, remaining(settings.budget, start), &prev);
      }
    }
    return *out.computed[s];
  };
  auto finish = [&](const Rule& rule, ExplainStep step, std::size_t threshold) {
    out.verification = verify_rule(rule, data, query);
    out.rule = rule;
    out.step = step;
    out.threshold = threshold;
  };

  for (std::size_t threshold : settings.support_thresholds) {
    if (db) {
      if (auto hit = db->lookup(query, threshold); hit && hit->label == label) {
        auto v = verify_rule(*hit, data, query);
        if (v.ok()) {
          hit->support = v.support;
          finish(*hit, ExplainStep::DbHit, threshold);
          return out;
        }
      }
    }
    for (std::size_t s = 0; s < kRuleSettings; ++s) {
      const Rule& rule = solve(solve, s);
      if (rule.support > threshold) {
        finish(rule, static_cast<ExplainStep>(s + 1), threshold);
        if (!out.verification.ok()) throw Error("solver returned a rule that fails verification");
        if (db && settings.write_through && !db->find(query)) {
          for (std::size_t r = 0; r < kRuleSettings; ++r) solve(solve, r);
          db->put(DbEntry{{query.begin(), query.end()}, label, out.computed, {}});
        }
        return out;
      }
    }
  }
  throw OutlierError();
}

}  // namespace arm
