#include "arm/setcover.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <string_view>

#include "arm/errors.hpp"
#include "arm/model_io.hpp"

namespace arm {

using nlohmann::json;

ExplainData::ExplainData(BinarizedMatrix matrix, std::vector<std::uint8_t> model_labels,
                         std::vector<double> probs)
    : X(std::move(matrix)), labels(std::move(model_labels)), probabilities(std::move(probs)) {
  if (labels.size() != X.rows()) throw ColumnCountMismatch(X.rows(), labels.size());
  if (!probabilities.empty() && probabilities.size() != X.rows())
    throw ColumnCountMismatch(X.rows(), probabilities.size());
  columns = X.column_bitsets();
  positive = Bitset(X.rows());
  std::uint64_t h = fnv1a(std::to_string(X.rows()) + "x" + std::to_string(X.cols()));
  for (std::size_t i = 0; i < X.rows(); ++i) {
    if (labels[i]) positive.set(i);
    const auto r = X.row(i);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(r.data()), r.size()), h);
  }
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(labels.data()), labels.size()), h);
  hash = h;
}

ExplainData make_explain_data(const ArmModel& model, BinarizedMatrix X) {
  std::vector<std::uint8_t> labels(X.rows());
  std::vector<double> probs(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    probs[i] = model.probability_binary(X.row(i));
    labels[i] = probs[i] >= 0.5 ? 1 : 0;
  }
  return ExplainData(std::move(X), std::move(labels), std::move(probs));
}

ExplainContext build_context(std::span<const std::uint8_t> query, std::uint8_t label,
                             const ExplainData& data) {
  if (query.size() != data.cols()) throw ColumnCountMismatch(data.cols(), query.size());
  ExplainContext ctx;
  ctx.query.assign(query.begin(), query.end());
  ctx.label = label ? 1 : 0;
  ctx.data = &data;
  ctx.opposite = ctx.label ? data.positive.flipped() : data.positive;
  Bitset covered(data.rows());
  for (std::size_t j = 0; j < query.size(); ++j) {
    if (!query[j]) continue;
    ctx.candidates.push_back(j);
    Bitset c = ctx.opposite;
    c.subtract(data.columns[j]);
    covered |= c;
    ctx.cover.push_back(std::move(c));
    ctx.cover_all.push_back(data.rows() - data.columns[j].count());
  }
  Bitset missed = ctx.opposite;
  missed.subtract(covered);
  if (missed.any()) throw InfeasibleExplanation(missed.find_first());
  return ctx;
}

Bitset rule_rows(std::span<const std::size_t> features, const ExplainData& data) {
  Bitset rows(data.rows(), true);
  for (std::size_t p : features) rows &= data.columns.at(p);
  return rows;
}

Rule greedy_cover(const ExplainContext& ctx) {
  Rule rule;
  rule.label = ctx.label;
  Bitset uncovered = ctx.opposite;
  std::vector<bool> used(ctx.candidates.size(), false);
  while (uncovered.any()) {
    std::size_t best = ctx.candidates.size(), best_gain = 0;
    for (std::size_t c = 0; c < ctx.candidates.size(); ++c) {
      if (used[c]) continue;
      const std::size_t gain = ctx.cover[c].and_count(uncovered);
      if (gain == 0) continue;
      if (best == ctx.candidates.size() || gain > best_gain ||
          (gain == best_gain && ctx.cover_all[c] > ctx.cover_all[best])) {
        best = c;
        best_gain = gain;
      }
    }
    if (best == ctx.candidates.size()) throw InfeasibleExplanation(uncovered.find_first());
    used[best] = true;
    uncovered.subtract(ctx.cover[best]);
    rule.features.push_back(ctx.candidates[best]);
  }
  std::sort(rule.features.begin(), rule.features.end());
  rule.support = rule_rows(rule.features, *ctx.data).count();
  rule.exact = false;
  rule.bound = 0.0;
  return rule;
}

namespace {

using Clock = std::chrono::steady_clock;

/// Hitting-set instance: every row lists the candidates that cover it.
struct CoverProblem {
  std::vector<std::size_t> cands;  ///< indices into ctx.candidates
  std::vector<Bitset> rows;        ///< over cands, sorted by count ascending
  std::vector<Bitset> hits;        ///< per cand, over rows
  /// Per cand, the other cands covering a superset of its rows. Once a cand is
  /// chosen these would make it redundant, so they are forbidden below it.
  std::vector<Bitset> dominators;
};

/// Opposite rows as candidate sets, deduplicated, with supersets removed.
std::vector<Bitset> requirement_rows(const ExplainContext& ctx, const std::vector<std::size_t>& cands) {
  const std::size_t n = ctx.data->rows();
  std::vector<std::size_t> index(n, n);
  std::vector<Bitset> rows;
  ctx.opposite.for_each([&](std::size_t i) {
    index[i] = rows.size();
    rows.emplace_back(cands.size());
  });
  for (std::size_t c = 0; c < cands.size(); ++c)
    ctx.cover[cands[c]].for_each([&](std::size_t i) { rows[index[i]].set(c); });

  std::vector<std::size_t> order(rows.size());
  std::vector<std::size_t> counts(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) counts[r] = rows[r].count();
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] < counts[b]; });
  std::vector<Bitset> kept;
  for (std::size_t r : order) {
    bool redundant = false;
    for (const auto& k : kept)
      if (k.is_subset_of(rows[r])) {
        redundant = true;
        break;
      }
    if (!redundant) kept.push_back(std::move(rows[r]));
  }
  return kept;
}

CoverProblem make_problem(const ExplainContext& ctx, std::vector<std::size_t> cands) {
  CoverProblem p;
  p.cands = std::move(cands);
  p.rows = requirement_rows(ctx, p.cands);
  p.hits.assign(p.cands.size(), Bitset(p.rows.size()));
  for (std::size_t r = 0; r < p.rows.size(); ++r) p.rows[r].for_each([&](std::size_t c) { p.hits[c].set(r); });
  const std::size_t m = p.cands.size();
  p.dominators.assign(m, Bitset(m));
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b)
      if (a != b && p.hits[a].is_subset_of(p.hits[b])) p.dominators[a].set(b);
  return p;
}

/// Drops candidates whose coverage is contained in another's with no less support.
std::vector<std::size_t> undominated(const ExplainContext& ctx, const CoverProblem& full) {
  const std::size_t m = full.cands.size();
  std::vector<std::size_t> support(m);
  for (std::size_t c = 0; c < m; ++c) support[c] = ctx.data->rows() - ctx.cover_all[full.cands[c]];
  std::vector<std::size_t> keep;
  for (std::size_t p = 0; p < m; ++p) {
    if (full.hits[p].none()) continue;
    bool dominated = false;
    for (std::size_t q = 0; q < m && !dominated; ++q) {
      if (q == p || support[q] < support[p] || !full.hits[p].is_subset_of(full.hits[q])) continue;
      const bool equal = full.hits[q].is_subset_of(full.hits[p]) && support[q] == support[p];
      dominated = !equal || q < p;
    }
    if (!dominated) keep.push_back(full.cands[p]);
  }
  return keep;
}

class Search {
 public:
  Search(const CoverProblem& problem, const SolverBudget& budget)
      : p_(problem), budget_(budget), start_(Clock::now()) {}

  bool stopped() const { return stopped_; }
  std::size_t nodes() const { return nodes_; }

  /// Greedy packing of rows with pairwise-disjoint allowed sets.
  std::size_t packing_bound(const Bitset& uncovered, const Bitset& forbidden) const {
    Bitset used(p_.cands.size());
    std::size_t lb = 0;
    uncovered.for_each([&](std::size_t r) {
      if (!used.intersects_minus(p_.rows[r], forbidden)) {
        ++lb;
        used.or_minus(p_.rows[r], forbidden);
      }
    });
    return lb;
  }

  /// Uncovered row with the fewest allowed candidates; sets `allowed`.
  std::size_t branch_row(const Bitset& uncovered, const Bitset& forbidden, Bitset& allowed) const {
    std::size_t best = p_.rows.size(), best_count = 0;
    uncovered.for_each([&](std::size_t r) {
      if (best != p_.rows.size() && best_count <= 1) return;
      const std::size_t c = p_.rows[r].count_minus(forbidden);
      if (best == p_.rows.size() || c < best_count) {
        best = r;
        best_count = c;
      }
    });
    if (best != p_.rows.size()) {
      allowed = p_.rows[best];
      allowed.subtract(forbidden);
    }
    return best;
  }

  bool tick() {
    ++nodes_;
    if (nodes_ >= budget_.node_limit) stopped_ = true;
    if ((nodes_ & 255) == 0 && Clock::now() - start_ >= budget_.time_limit) stopped_ = true;
    return stopped_;
  }

 protected:
  const CoverProblem& p_;
  SolverBudget budget_;
  Clock::time_point start_;
  std::size_t nodes_ = 0;
  bool stopped_ = false;
};

class SparsitySearch : public Search {
 public:
  SparsitySearch(const CoverProblem& problem, const SolverBudget& budget, std::vector<std::size_t> incumbent)
      : Search(problem, budget), best_(std::move(incumbent)) {}

  void run(std::size_t root_lb) {
    root_lb_ = root_lb;
    if (best_.size() <= root_lb_ + static_cast<std::size_t>(budget_.gap)) {
      closed_ = best_.size() <= root_lb_;
      return;
    }
    dfs(Bitset(p_.rows.size(), true), Bitset(p_.cands.size()));
    closed_ = !stopped_ && !gap_stop_;
  }

  const std::vector<std::size_t>& best() const { return best_; }
  bool closed() const { return closed_ || best_.size() <= root_lb_; }

 private:
  void dfs(const Bitset& uncovered, const Bitset& forbidden) {
    if (tick()) return;
    if (uncovered.none()) {
      if (chosen_.size() < best_.size()) {
        best_ = chosen_;
        if (best_.size() <= root_lb_ + static_cast<std::size_t>(budget_.gap)) gap_stop_ = true;
      }
      return;
    }
    if (chosen_.size() + packing_bound(uncovered, forbidden) >= best_.size()) return;
    Bitset allowed;
    if (branch_row(uncovered, forbidden, allowed) == p_.rows.size() || allowed.none()) return;

    std::vector<std::pair<std::size_t, std::size_t>> children;  // (gain, cand)
    allowed.for_each([&](std::size_t c) { children.emplace_back(p_.hits[c].and_count(uncovered), c); });
    std::stable_sort(children.begin(), children.end(), [](auto& a, auto& b) { return a.first > b.first; });
    Bitset local = forbidden;
    for (const auto& [gain, c] : children) {
      chosen_.push_back(c);
      Bitset next = uncovered;
      next.subtract(p_.hits[c]);
      Bitset below = local;
      below |= p_.dominators[c];
      dfs(next, below);
      chosen_.pop_back();
      if (stopped_ || gap_stop_) return;
      local.set(c);
      if (chosen_.size() + 1 >= best_.size()) return;
    }
  }

  std::vector<std::size_t> best_;
  std::vector<std::size_t> chosen_;
  std::size_t root_lb_ = 0;
  bool closed_ = false;
  bool gap_stop_ = false;
};

class SupportSearch : public Search {
 public:
  SupportSearch(const CoverProblem& problem, const SolverBudget& budget, const ExplainContext& ctx,
                std::size_t cap)
      : Search(problem, budget), ctx_(ctx), cap_(cap) {}

  void set_incumbent(std::vector<std::size_t> cands, std::size_t support) {
    best_ = std::move(cands);
    best_support_ = support;
    have_ = true;
  }

  void run() {
    dfs(Bitset(p_.rows.size(), true), Bitset(p_.cands.size()), Bitset(ctx_.data->rows(), true));
  }

  bool have() const { return have_; }
  const std::vector<std::size_t>& best() const { return best_; }
  std::size_t best_support() const { return best_support_; }
  std::size_t root_bound() const { return root_bound_; }

 private:
  const Bitset& column(std::size_t c) const { return ctx_.data->columns[ctx_.candidates[p_.cands[c]]]; }

  void dfs(const Bitset& uncovered, const Bitset& forbidden, const Bitset& rows) {
    if (tick()) return;
    const bool root = chosen_.empty();
    if (uncovered.none()) {
      const std::size_t s = rows.count();
      if (root) root_bound_ = s;
      if (!have_ || s > best_support_) {
        best_ = chosen_;
        best_support_ = s;
        have_ = true;
      }
      return;
    }
    if (chosen_.size() >= cap_) return;
    if (chosen_.size() + 1 == cap_) {
      last_level(uncovered, forbidden, rows);
      return;
    }
    if (chosen_.size() + 2 == cap_) {
      two_levels(uncovered, forbidden, rows);
      return;
    }

    // Support reachable through each candidate; those that cannot beat the
    // incumbent are forbidden below this node.
    const std::size_t m = p_.cands.size();
    std::vector<std::size_t> reach(m, 0);
    Bitset viable(m);
    for (std::size_t c = 0; c < m; ++c) {
      if (forbidden.test(c)) continue;
      reach[c] = rows.and_count(column(c));
      if (!have_ || reach[c] > best_support_) viable.set(c);
    }
    if (root) {
      std::size_t ub = 0;
      for (std::size_t c = 0; c < m; ++c)
        if (!forbidden.test(c)) ub = std::max(ub, reach[c]);
      root_bound_ = ub;
    }
    const Bitset pruned = viable.flipped();

    // Every uncovered row needs a viable candidate; branch on the row with fewest.
    std::size_t branch = p_.rows.size(), fewest = 0;
    bool dead = false;
    uncovered.for_each([&](std::size_t r) {
      if (dead) return;
      const std::size_t cnt = p_.rows[r].count_minus(pruned);
      if (cnt == 0) dead = true;
      if (branch == p_.rows.size() || cnt < fewest) {
        branch = r;
        fewest = cnt;
      }
    });
    if (dead) return;
    if (chosen_.size() + packing_bound(uncovered, pruned) > cap_) return;

    std::vector<std::size_t> children;
    p_.rows[branch].for_each([&](std::size_t c) {
      if (viable.test(c)) children.push_back(c);
    });
    std::stable_sort(children.begin(), children.end(),
                     [&](std::size_t a, std::size_t b) { return reach[a] > reach[b]; });
    Bitset local = pruned;
    Bitset next_rows(rows.size());
    for (std::size_t c : children) {
      if (have_ && reach[c] <= best_support_) break;
      next_rows = rows;
      next_rows &= column(c);
      chosen_.push_back(c);
      Bitset next = uncovered;
      next.subtract(p_.hits[c]);
      Bitset below = local;
      below |= p_.dominators[c];
      dfs(next, below, next_rows);
      chosen_.pop_back();
      if (stopped_) return;
      local.set(c);
    }
  }

  /// Two conjuncts left: branch on the tightest row, then finish directly.
  void two_levels(const Bitset& uncovered, const Bitset& forbidden, const Bitset& rows) {
    std::size_t branch = p_.rows.size(), fewest = 0;
    uncovered.for_each([&](std::size_t r) {
      if (branch != p_.rows.size() && fewest <= 1) return;
      const std::size_t cnt = p_.rows[r].count_minus(forbidden);
      if (branch == p_.rows.size() || cnt < fewest) {
        branch = r;
        fewest = cnt;
      }
    });
    if (fewest == 0) return;
    std::vector<std::pair<std::size_t, std::size_t>> children;  // (reach, cand)
    p_.rows[branch].for_each([&](std::size_t c) {
      if (forbidden.test(c)) return;
      const std::size_t s = rows.and_count(column(c));
      if (!have_ || s > best_support_) children.emplace_back(s, c);
    });
    std::stable_sort(children.begin(), children.end(), [](auto& a, auto& b) { return a.first > b.first; });
    Bitset local = forbidden;
    Bitset next_rows(rows.size());
    for (const auto& [reach, c] : children) {
      if (tick()) return;
      if (have_ && reach <= best_support_) break;
      next_rows = rows;
      next_rows &= column(c);
      Bitset next = uncovered;
      next.subtract(p_.hits[c]);
      chosen_.push_back(c);
      if (next.none()) {
        if (!have_ || reach > best_support_) {
          best_ = chosen_;
          best_support_ = reach;
          have_ = true;
        }
      } else {
        Bitset below = local;
        below |= p_.dominators[c];
        last_level(next, below, next_rows);
      }
      chosen_.pop_back();
      local.set(c);
    }
  }

  /// One conjunct left: it must hit every uncovered row.
  void last_level(const Bitset& uncovered, const Bitset& forbidden, const Bitset& rows) {
    Bitset common = forbidden.flipped();
    uncovered.for_each([&](std::size_t r) {
      if (common.any()) common &= p_.rows[r];
    });
    common.for_each([&](std::size_t c) {
      const std::size_t s = rows.and_count(column(c));
      if (!have_ || s > best_support_) {
        best_ = chosen_;
        best_.push_back(c);
        best_support_ = s;
        have_ = true;
      }
    });
  }

  const ExplainContext& ctx_;
  std::size_t cap_;
  std::vector<std::size_t> best_;
  std::vector<std::size_t> chosen_;
  std::size_t best_support_ = 0;
  std::size_t root_bound_ = 0;
  bool have_ = false;
};

std::vector<std::size_t> all_candidates(const ExplainContext& ctx) {
  std::vector<std::size_t> c(ctx.candidates.size());
  std::iota(c.begin(), c.end(), std::size_t{0});
  return c;
}

/// Maps problem-local candidate indices to column indices.
std::vector<std::size_t> to_columns(const ExplainContext& ctx, const CoverProblem& p,
                                    const std::vector<std::size_t>& local) {
  std::vector<std::size_t> cols;
  for (std::size_t c : local) cols.push_back(ctx.candidates[p.cands[c]]);
  std::sort(cols.begin(), cols.end());
  return cols;
}

/// Expresses a rule over the problem's local candidate indices; nullopt if impossible.
std::optional<std::vector<std::size_t>> to_local(const ExplainContext& ctx, const CoverProblem& p,
                                                 const std::vector<std::size_t>& columns) {
  std::vector<std::size_t> local;
  for (std::size_t col : columns) {
    auto it = std::lower_bound(ctx.candidates.begin(), ctx.candidates.end(), col);
    if (it == ctx.candidates.end() || *it != col) return std::nullopt;
    const auto ci = static_cast<std::size_t>(it - ctx.candidates.begin());
    auto lt = std::find(p.cands.begin(), p.cands.end(), ci);
    if (lt == p.cands.end()) return std::nullopt;
    local.push_back(static_cast<std::size_t>(lt - p.cands.begin()));
  }
  return local;
}

bool covers(const CoverProblem& p, const std::vector<std::size_t>& local) {
  Bitset uncovered(p.rows.size(), true);
  for (std::size_t c : local) uncovered.subtract(p.hits[c]);
  return uncovered.none();
}

}  // namespace

Rule solve_max_sparsity(const ExplainContext& ctx, const SparsityOptions& options) {
  Rule rule;
  rule.label = ctx.label;
  if (ctx.opposite.none()) {
    rule.support = ctx.data->rows();
    return rule;
  }
  const Rule greedy = greedy_cover(ctx);
  CoverProblem problem = make_problem(ctx, all_candidates(ctx));
  if (options.drop_dominated) problem = make_problem(ctx, undominated(ctx, problem));

  // Warm start: greedy rerun on the reduced problem so it stays expressible.
  std::vector<std::size_t> incumbent;
  if (auto local = to_local(ctx, problem, greedy.features); local && covers(problem, *local)) {
    incumbent = *local;
  } else {
    Bitset uncovered(problem.rows.size(), true);
    while (uncovered.any()) {
      std::size_t best = 0, gain = 0;
      for (std::size_t c = 0; c < problem.cands.size(); ++c) {
        const std::size_t g = problem.hits[c].and_count(uncovered);
        if (g > gain) {
          gain = g;
          best = c;
        }
      }
      if (gain == 0) throw BudgetExhaustedNoIncumbent("greedy warm start failed");
      incumbent.push_back(best);
      uncovered.subtract(problem.hits[best]);
    }
  }

  SparsitySearch search(problem, options.budget, incumbent);
  const std::size_t root_lb =
      search.packing_bound(Bitset(problem.rows.size(), true), Bitset(problem.cands.size()));
  search.run(root_lb);
  rule.features = to_columns(ctx, problem, search.best());
  rule.exact = search.closed();
  rule.bound = static_cast<double>(rule.exact ? rule.features.size() : root_lb);
  rule.support = rule_rows(rule.features, *ctx.data).count();
  return rule;
}

Rule solve_max_support(const ExplainContext& ctx, std::size_t max_sparsity, const SolverBudget& budget,
                       const Rule* warm_start) {
  Rule rule;
  rule.label = ctx.label;
  if (ctx.opposite.none()) {
    rule.support = ctx.data->rows();
    rule.bound = static_cast<double>(rule.support);
    return rule;
  }
  const CoverProblem problem = make_problem(ctx, all_candidates(ctx));
  SupportSearch search(problem, budget, ctx, max_sparsity);
  if (warm_start && warm_start->sparsity() <= max_sparsity) {
    if (auto local = to_local(ctx, problem, warm_start->features); local && covers(problem, *local))
      search.set_incumbent(*local, rule_rows(warm_start->features, *ctx.data).count());
  }
  if (!search.have()) {
    const Rule greedy = greedy_cover(ctx);
    if (greedy.sparsity() <= max_sparsity)
      if (auto local = to_local(ctx, problem, greedy.features)) search.set_incumbent(*local, greedy.support);
  }
  search.run();
  if (!search.have()) {
    if (search.stopped()) throw BudgetExhaustedNoIncumbent("no rule found within the solver budget");
    throw InfeasibleSparsityCap("no consistent rule with at most " + std::to_string(max_sparsity) +
                                " conditions");
  }
  rule.features = to_columns(ctx, problem, search.best());
  rule.support = search.best_support();
  rule.exact = !search.stopped();
  rule.bound = static_cast<double>(rule.exact ? rule.support : std::max(search.root_bound(), rule.support));
  return rule;
}

Verification verify_rule(const Rule& rule, const ExplainData& data, std::span<const std::uint8_t> query) {
  Verification v;
  for (std::size_t p : rule.features)
    if (p >= data.cols()) throw ColumnCountMismatch(data.cols(), p + 1);
  const Bitset rows = rule_rows(rule.features, data);
  v.support = rows.count();
  Bitset bad = rows;
  if (rule.label)
    bad.subtract(data.positive);
  else
    bad &= data.positive;
  bad.for_each([&](std::size_t i) { v.counterexamples.push_back(i); });
  v.consistent = v.counterexamples.empty();
  if (!query.empty())
    for (std::size_t p : rule.features)
      if (p >= query.size() || !query[p]) v.relevant = false;
  return v;
}

std::string render_rule(const Rule& rule, const Binarizer& binarizer) {
  std::string text;
  for (std::size_t k = 0; k < rule.features.size(); ++k) {
    if (k) text += " AND ";
    text += binarizer.column(rule.features[k]).display_name;
  }
  if (text.empty()) text = "any observation";
  text += rule.label ? " => high risk" : " => low risk";
  text += ", supported by " + std::to_string(rule.support) + " prior cases";
  return text;
}

json rule_to_json(const Rule& rule, const Binarizer* binarizer) {
  json j{{"features", rule.features},
         {"label", rule.label},
         {"sparsity", rule.sparsity()},
         {"support", rule.support},
         {"exact", rule.exact},
         {"bound", rule.bound}};
  if (binarizer) {
    json conds = json::array();
    for (std::size_t p : rule.features) conds.push_back(binarizer->column(p).display_name);
    j["conditions"] = conds;
    j["text"] = render_rule(rule, *binarizer);
  }
  return j;
}

Rule rule_from_json(const json& j) {
  try {
    Rule r;
    r.features = j.at("features").get<std::vector<std::size_t>>();
    std::sort(r.features.begin(), r.features.end());
    r.label = j.at("label").get<std::uint8_t>();
    r.support = j.at("support").get<std::size_t>();
    r.exact = j.value("exact", true);
    r.bound = j.value("bound", 0.0);
    return r;
  } catch (const json::exception& e) {
    throw MalformedDocument(std::string("bad rule: ") + e.what());
  }
}

}  // namespace arm
