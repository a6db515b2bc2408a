#include "arm/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <unordered_map>

#include <Eigen/Dense>

#include "arm/errors.hpp"

namespace arm {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<std::size_t> active_set(std::span<const double> coefficients, const std::vector<bool>& nonneg) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < coefficients.size(); ++j)
    if (nonneg[j] && coefficients[j] == 0.0) out.push_back(j);
  return out;
}

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

// ---- config & report --------------------------------------------------------

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (j.contains("l2_lambda") && !j.at("l2_lambda").is_null()) c.l2_lambda = j.at("l2_lambda").get<double>();
  c.max_iters = j.value("max_iters", c.max_iters);
  c.grad_tol = j.value("grad_tol", c.grad_tol);
  c.joint_alpha = j.value("joint_alpha", c.joint_alpha);
  c.seed = j.value("seed", c.seed);
  c.initial_step = j.value("initial_step", c.initial_step);
  c.armijo_c = j.value("armijo_c", c.armijo_c);
  c.backtrack = j.value("backtrack", c.backtrack);
  c.max_backtracks = j.value("max_backtracks", c.max_backtracks);
  c.bb_steps = j.value("bb_steps", c.bb_steps);
  c.threads = j.value("threads", c.threads);
  c.quantile_bins = j.value("quantile_bins", c.quantile_bins);
  if (!(c.grad_tol > 0)) throw MalformedDocument("grad_tol must be > 0");
  if (c.joint_alpha < 0 || c.joint_alpha > 1) throw MalformedDocument("joint_alpha must be in [0, 1]");
  if (c.l2_lambda && *c.l2_lambda < 0) throw MalformedDocument("l2_lambda must be >= 0");
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"l2_lambda", c.l2_lambda ? json(*c.l2_lambda) : json(nullptr)},
              {"max_iters", c.max_iters},
              {"grad_tol", c.grad_tol},
              {"joint_alpha", c.joint_alpha},
              {"seed", c.seed},
              {"initial_step", c.initial_step},
              {"armijo_c", c.armijo_c},
              {"backtrack", c.backtrack},
              {"max_backtracks", c.max_backtracks},
              {"bb_steps", c.bb_steps},
              {"threads", c.threads},
              {"quantile_bins", c.quantile_bins}};
}

bool FitReport::converged() const {
  for (const auto& s : subscales)
    if (!s.converged) return false;
  if (!second_layer.converged) return false;
  return !joint || joint->converged;
}

namespace {

json stats_json(const FitStats& s) {
  return json{{"name", s.name},
              {"loss", s.loss},
              {"iterations", s.iterations},
              {"converged", s.converged},
              {"kkt_violation", s.kkt_violation},
              {"active_constraints", s.active_constraints}};
}

}  // namespace

json FitReport::to_json() const {
  json subs = json::array();
  for (const auto& s : subscales) subs.push_back(stats_json(s));
  json j{{"subscales", subs},
         {"second_layer", stats_json(second_layer)},
         {"train_accuracy", train_accuracy},
         {"converged", converged()}};
  j["joint"] = joint ? stats_json(*joint) : json(nullptr);
  j["test_accuracy"] = test_accuracy ? json(*test_accuracy) : json(nullptr);
  return j;
}

// ---- projected gradient -----------------------------------------------------

double kkt_violation(const BoxProblem& problem, std::span<const double> theta,
                     std::span<const double> grad) {
  double worst = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    double v;
    if (theta[j] <= problem.lower[j])
      v = std::max(0.0, -grad[j]);
    else if (theta[j] >= problem.upper[j])
      v = std::max(0.0, grad[j]);
    else
      v = std::abs(grad[j]);
    worst = std::max(worst, v);
  }
  return worst;
}

SolveResult projected_gradient(const BoxProblem& problem, std::vector<double> theta0,
                               const TrainConfig& config, bool keep_trace) {
  const std::size_t n = problem.dim;
  SolveResult res;
  auto& theta = res.theta;
  theta = std::move(theta0);
  theta.resize(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) theta[j] = std::clamp(theta[j], problem.lower[j], problem.upper[j]);

  std::vector<double> grad(n), cand(n), cand_grad(n);
  double f = problem.eval(theta, grad);
  double kkt = kkt_violation(problem, theta, grad);
  if (keep_trace) res.trace.push_back(f);
  double step = config.initial_step;

  std::size_t it = 0;
  for (; it < config.max_iters && kkt > config.grad_tol; ++it) {
    bool accepted = false;
    double fc = f;
    for (std::size_t bt = 0; bt <= config.max_backtracks; ++bt) {
      double gd = 0.0;
      bool moved = false;
      for (std::size_t j = 0; j < n; ++j) {
        cand[j] = std::clamp(theta[j] - step * grad[j], problem.lower[j], problem.upper[j]);
        const double d = cand[j] - theta[j];
        moved |= d != 0.0;
        gd += grad[j] * d;
      }
      if (!moved) break;
      fc = problem.eval(cand, cand_grad);
      if (std::isfinite(fc) && fc <= f + config.armijo_c * gd) {
        accepted = true;
        break;
      }
      step *= config.backtrack;
    }
    if (!accepted) break;

    double ss = 0.0, sy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = cand[j] - theta[j];
      const double y = cand_grad[j] - grad[j];
      ss += s * s;
      sy += s * y;
    }
    theta.swap(cand);
    grad.swap(cand_grad);
    f = fc;
    kkt = kkt_violation(problem, theta, grad);
    if (keep_trace) res.trace.push_back(f);
    if (config.bb_steps) {
      step = sy > 0 ? std::clamp(ss / sy, 1e-12, 1e12) : std::min(step * 2.0, 1e12);
    }
  }
  res.value = f;
  res.iterations = it;
  res.kkt_violation = kkt;
  res.converged = kkt <= config.grad_tol;
  return res;
}

// ---- logistic data ----------------------------------------------------------

double LogisticData::total() const { return std::accumulate(count.begin(), count.end(), 0.0); }

void LogisticData::add_row(std::span<const double> dense, double c, double pos) {
  for (std::size_t j = 0; j < dense.size(); ++j) {
    if (dense[j] != 0.0) {
      col.push_back(j);
      val.push_back(dense[j]);
    }
  }
  row_ptr.push_back(col.size());
  count.push_back(c);
  positives.push_back(pos);
}

LogisticData group_binary_rows(const BinarizedMatrix& X, std::span<const std::size_t> columns,
                               std::span<const std::uint8_t> labels) {
  if (labels.size() != X.rows()) throw ColumnCountMismatch(X.rows(), labels.size());
  LogisticData data;
  data.dim = columns.size();
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> keys;
  std::vector<double> counts, positives;
  std::string key(columns.size(), '\0');
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) key[j] = static_cast<char>(X(i, columns[j]));
    auto [it, fresh] = index.try_emplace(key, keys.size());
    if (fresh) {
      keys.push_back(key);
      counts.push_back(0);
      positives.push_back(0);
    }
    counts[it->second] += 1;
    positives[it->second] += labels[i];
  }
  std::vector<double> dense(columns.size());
  for (std::size_t q = 0; q < keys.size(); ++q) {
    for (std::size_t j = 0; j < columns.size(); ++j) dense[j] = static_cast<double>(keys[q][j]);
    data.add_row(dense, counts[q], positives[q]);
  }
  return data;
}

double logistic_objective(const LogisticData& data, double lambda, std::span<const double> theta,
                          std::span<double> grad) {
  const std::size_t d = data.dim;
  const double inv_n = 1.0 / std::max(1.0, data.total());
  const double bias = theta[d];
  double loss = 0.0;
  std::fill(grad.begin(), grad.end(), 0.0);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    double z = bias;
    for (std::size_t k = data.row_ptr[i]; k < data.row_ptr[i + 1]; ++k) z += data.val[k] * theta[data.col[k]];
    loss += data.count[i] * softplus(z) - data.positives[i] * z;
    const double dz = data.count[i] * logistic(z) - data.positives[i];
    for (std::size_t k = data.row_ptr[i]; k < data.row_ptr[i + 1]; ++k) grad[data.col[k]] += dz * data.val[k];
    grad[d] += dz;
  }
  double ridge = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    ridge += theta[j] * theta[j];
    grad[j] += lambda * theta[j];
  }
  for (auto& g : grad) g *= inv_n;
  return inv_n * (loss + 0.5 * lambda * ridge);
}

BoxProblem logistic_box_problem(const LogisticData& data, double lambda, const std::vector<bool>& nonneg) {
  BoxProblem p;
  p.dim = data.dim + 1;
  p.lower.assign(p.dim, -kInf);
  p.upper.assign(p.dim, kInf);
  for (std::size_t j = 0; j < data.dim; ++j)
    if (!nonneg.empty() && nonneg[j]) p.lower[j] = 0.0;
  p.lower[data.dim] = -kLogitClamp;
  p.upper[data.dim] = kLogitClamp;
  p.eval = [&data, lambda](std::span<const double> theta, std::span<double> grad) {
    return logistic_objective(data, lambda, theta, grad);
  };
  return p;
}

namespace {

LinearFit solve_logistic(const LogisticData& data, const std::vector<bool>& nonneg, double lambda,
                         const TrainConfig& config, std::string name) {
  const auto problem = logistic_box_problem(data, lambda, nonneg);
  auto res = projected_gradient(problem, std::vector<double>(problem.dim, 0.0), config);
  LinearFit fit;
  fit.bias = res.theta[data.dim];
  fit.coefficients.assign(res.theta.begin(), res.theta.begin() + static_cast<std::ptrdiff_t>(data.dim));
  fit.stats.name = std::move(name);
  fit.stats.loss = res.value;
  fit.stats.iterations = res.iterations;
  fit.stats.converged = res.converged;
  fit.stats.kkt_violation = res.kkt_violation;
  if (!nonneg.empty()) fit.stats.active_constraints = active_set(fit.coefficients, nonneg);
  return fit;
}

}  // namespace

LinearFit fit_subscale(const BinarizedMatrix& X, std::span<const std::size_t> columns,
                       std::span<const std::uint8_t> labels, const std::vector<bool>& nonneg,
                       const TrainConfig& config) {
  if (nonneg.size() != columns.size()) throw ColumnCountMismatch(columns.size(), nonneg.size());
  const auto data = group_binary_rows(X, columns, labels);
  return solve_logistic(data, nonneg, config.lambda_for(X.rows()), config, "subscale");
}

LinearFit fit_second_layer(std::span<const double> risks, std::size_t K,
                           std::span<const std::uint8_t> labels, const TrainConfig& config) {
  const std::size_t n = labels.size();
  if (risks.size() != n * K) throw ColumnCountMismatch(n * K, risks.size());
  LogisticData data;
  data.dim = K;
  for (std::size_t i = 0; i < n; ++i) data.add_row(risks.subspan(i * K, K), 1.0, labels[i]);
  return solve_logistic(data, std::vector<bool>(K, true), config.lambda_for(n), config, "second_layer");
}

namespace {

/// Damped Newton for the unconstrained objective.
LinearFit newton_logistic(const LogisticData& data, double lambda, const TrainConfig& config, std::string name) {
  const std::size_t d = data.dim + 1;
  const double n = data.total();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  Eigen::VectorXd grad(static_cast<Eigen::Index>(d)), trial_grad(static_cast<Eigen::Index>(d));
  auto eval = [&](const Eigen::VectorXd& t, Eigen::VectorXd& g) {
    return logistic_objective(data, lambda, std::span<const double>(t.data(), d), std::span<double>(g.data(), d));
  };
  double value = eval(theta, grad);
  LinearFit fit;
  std::size_t it = 0;
  for (; it < config.max_iters && grad.lpNorm<Eigen::Infinity>() > config.grad_tol; ++it) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.rows()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      double z = theta[static_cast<Eigen::Index>(data.dim)];
      for (std::size_t e = data.row_ptr[i]; e < data.row_ptr[i + 1]; ++e)
        z += data.val[e] * theta[static_cast<Eigen::Index>(data.col[e])];
      const double p = logistic(z);
      const double w = std::sqrt(data.count[i] * p * (1.0 - p) / n);
      for (std::size_t e = data.row_ptr[i]; e < data.row_ptr[i + 1]; ++e)
        A(r, static_cast<Eigen::Index>(data.col[e])) = w * data.val[e];
      A(r, static_cast<Eigen::Index>(data.dim)) = w;
    }
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    H.selfadjointView<Eigen::Lower>().rankUpdate(A.transpose());
    H = H.selfadjointView<Eigen::Lower>();
    for (std::size_t j = 0; j < data.dim; ++j) H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += lambda / n;
    const Eigen::VectorXd step = -H.ldlt().solve(grad);
    double slope = grad.dot(step);
    Eigen::VectorXd dir = step;
    if (!(slope < 0)) {
      dir = -grad;
      slope = -grad.squaredNorm();
    }
    double t = 1.0, next = value;
    Eigen::VectorXd candidate;
    std::size_t back = 0;
    for (; back < config.max_backtracks; ++back, t *= config.backtrack) {
      candidate = theta + t * dir;
      next = eval(candidate, trial_grad);
      if (next <= value + config.armijo_c * t * slope) break;
      // near the optimum a full step changes the value only at rounding level
      if (back == 0 && next - value <= 4 * std::numeric_limits<double>::epsilon() * std::abs(value)) break;
    }
    if (back == config.max_backtracks) break;
    theta = candidate;
    grad = trial_grad;
    value = next;
  }
  fit.coefficients.assign(theta.data(), theta.data() + data.dim);
  fit.bias = theta[static_cast<Eigen::Index>(data.dim)];
  fit.stats.name = std::move(name);
  fit.stats.loss = value;
  fit.stats.iterations = it;
  fit.stats.kkt_violation = grad.lpNorm<Eigen::Infinity>();
  fit.stats.converged = fit.stats.kkt_violation <= config.grad_tol;
  return fit;
}

}  // namespace

LinearFit fit_unconstrained(const BinarizedMatrix& X, std::span<const std::uint8_t> labels,
                            const TrainConfig& config) {
  std::vector<std::size_t> cols(X.originals());
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  const auto data = group_binary_rows(X, cols, labels);
  return newton_logistic(data, config.lambda_for(X.rows()), config, "logistic_baseline");
}

// ---- joint ------------------------------------------------------------------

JointObjective::JointObjective(const ArmModel& model, const BinarizedMatrix& X,
                               std::span<const std::uint8_t> labels, double alpha, double lambda)
    : labels_(labels.begin(), labels.end()), alpha_(alpha), lambda_(lambda) {
  if (labels.size() != X.rows()) throw ColumnCountMismatch(X.rows(), labels.size());
  std::size_t offset = 0;
  for (std::size_t k = 0; k < model.subscale_count(); ++k) {
    Block b;
    const auto& cols = model.subscale_columns(k);
    b.offset = offset;
    b.width = cols.size();
    for (std::size_t c : cols) b.nonneg.push_back(model.binarizer().is_constrained(c));
    // group rows and remember each row's pattern
    std::unordered_map<std::string, std::size_t> index;
    std::string key(cols.size(), '\0');
    std::vector<std::string> keys;
    std::vector<double> counts, pos;
    b.row_pattern.resize(X.rows());
    for (std::size_t i = 0; i < X.rows(); ++i) {
      for (std::size_t j = 0; j < cols.size(); ++j) key[j] = static_cast<char>(X(i, cols[j]));
      auto [it, fresh] = index.try_emplace(key, keys.size());
      if (fresh) {
        keys.push_back(key);
        counts.push_back(0);
        pos.push_back(0);
      }
      counts[it->second] += 1;
      pos[it->second] += labels[i];
      b.row_pattern[i] = it->second;
    }
    b.patterns.dim = cols.size();
    std::vector<double> dense(cols.size());
    for (std::size_t q = 0; q < keys.size(); ++q) {
      for (std::size_t j = 0; j < cols.size(); ++j) dense[j] = static_cast<double>(keys[q][j]);
      b.patterns.add_row(dense, counts[q], pos[q]);
    }
    offset += b.width + 1;
    blocks_.push_back(std::move(b));
  }
  gamma_offset_ = offset;
  dim_ = offset + model.subscale_count() + 1;
}

std::vector<double> JointObjective::pack(const ArmModel& model) const {
  std::vector<double> theta(dim_);
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const auto& s = model.subscales()[k];
    std::copy(s.coefficients.begin(), s.coefficients.end(), theta.begin() + static_cast<std::ptrdiff_t>(blocks_[k].offset));
    theta[blocks_[k].offset + blocks_[k].width] = s.bias;
    theta[gamma_offset_ + k] = model.weights()[k];
  }
  theta[dim_ - 1] = model.bias();
  return theta;
}

ArmModel JointObjective::unpack(const ArmModel& like, std::span<const double> theta) const {
  auto subscales = like.subscales();
  std::vector<double> weights(blocks_.size());
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const auto& b = blocks_[k];
    subscales[k].coefficients.assign(theta.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                     theta.begin() + static_cast<std::ptrdiff_t>(b.offset + b.width));
    subscales[k].bias = theta[b.offset + b.width];
    weights[k] = theta[gamma_offset_ + k];
  }
  return ArmModel(like.binarizer(), std::move(subscales), std::move(weights), theta[dim_ - 1]);
}

double JointObjective::operator()(std::span<const double> theta, std::span<double> grad) const {
  const std::size_t K = blocks_.size();
  const std::size_t n = labels_.size();
  const double inv_n = 1.0 / std::max<double>(1.0, static_cast<double>(n));
  const double sub_w = K > 0 ? (1.0 - alpha_) / static_cast<double>(K) : 0.0;
  std::fill(grad.begin(), grad.end(), 0.0);

  // subscale logits per pattern
  std::vector<std::vector<double>> z(K), r(K);
  double sub_loss = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& b = blocks_[k];
    const auto& d = b.patterns;
    const double bias = theta[b.offset + b.width];
    z[k].resize(d.rows());
    r[k].resize(d.rows());
    double loss = 0.0, ridge = 0.0;
    for (std::size_t q = 0; q < d.rows(); ++q) {
      double zq = bias;
      for (std::size_t e = d.row_ptr[q]; e < d.row_ptr[q + 1]; ++e) zq += d.val[e] * theta[b.offset + d.col[e]];
      z[k][q] = zq;
      r[k][q] = logistic(zq);
      loss += d.count[q] * softplus(zq) - d.positives[q] * zq;
    }
    for (std::size_t j = 0; j < b.width; ++j) ridge += theta[b.offset + j] * theta[b.offset + j];
    sub_loss += inv_n * (loss + 0.5 * lambda_ * ridge);
  }

  // global layer per row
  std::vector<std::vector<double>> dz(K);
  for (std::size_t k = 0; k < K; ++k) {
    dz[k].assign(blocks_[k].patterns.rows(), 0.0);
    const auto& d = blocks_[k].patterns;
    for (std::size_t q = 0; q < d.rows(); ++q)
      dz[k][q] = sub_w * inv_n * (d.count[q] * r[k][q] - d.positives[q]);
  }
  const double gamma0 = theta[dim_ - 1];
  double glob = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double u = gamma0;
    for (std::size_t k = 0; k < K; ++k) u += theta[gamma_offset_ + k] * r[k][blocks_[k].row_pattern[i]];
    glob += softplus(u) - labels_[i] * u;
    const double du = alpha_ * inv_n * (logistic(u) - labels_[i]);
    grad[dim_ - 1] += du;
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t q = blocks_[k].row_pattern[i];
      const double rk = r[k][q];
      grad[gamma_offset_ + k] += du * rk;
      dz[k][q] += du * theta[gamma_offset_ + k] * rk * (1.0 - rk);
    }
  }
  double gamma_ridge = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double g = theta[gamma_offset_ + k];
    gamma_ridge += g * g;
    grad[gamma_offset_ + k] += alpha_ * inv_n * lambda_ * g;
  }
  glob = inv_n * (glob + 0.5 * lambda_ * gamma_ridge);

  // back to subscale coefficients
  for (std::size_t k = 0; k < K; ++k) {
    const auto& b = blocks_[k];
    const auto& d = b.patterns;
    for (std::size_t q = 0; q < d.rows(); ++q) {
      for (std::size_t e = d.row_ptr[q]; e < d.row_ptr[q + 1]; ++e) grad[b.offset + d.col[e]] += dz[k][q] * d.val[e];
      grad[b.offset + b.width] += dz[k][q];
    }
    for (std::size_t j = 0; j < b.width; ++j) grad[b.offset + j] += sub_w * inv_n * lambda_ * theta[b.offset + j];
  }
  return alpha_ * glob + (K > 0 ? (1.0 - alpha_) * sub_loss / static_cast<double>(K) : 0.0);
}

BoxProblem JointObjective::box_problem() const {
  BoxProblem p;
  p.dim = dim_;
  p.lower.assign(dim_, -kInf);
  p.upper.assign(dim_, kInf);
  for (const auto& b : blocks_) {
    for (std::size_t j = 0; j < b.width; ++j)
      if (b.nonneg[j]) p.lower[b.offset + j] = 0.0;
    p.lower[b.offset + b.width] = -kLogitClamp;
    p.upper[b.offset + b.width] = kLogitClamp;
  }
  for (std::size_t k = 0; k < blocks_.size(); ++k) p.lower[gamma_offset_ + k] = 0.0;
  p.lower[dim_ - 1] = -kLogitClamp;
  p.upper[dim_ - 1] = kLogitClamp;
  p.eval = [this](std::span<const double> theta, std::span<double> grad) { return (*this)(theta, grad); };
  return p;
}

ArmModel fit_joint(const ArmModel& model, const BinarizedMatrix& X,
                   std::span<const std::uint8_t> labels, const TrainConfig& config, FitStats* stats) {
  JointObjective objective(model, X, labels, config.joint_alpha, config.lambda_for(X.rows()));
  const auto problem = objective.box_problem();
  auto res = projected_gradient(problem, objective.pack(model), config);
  if (stats) {
    stats->name = "joint";
    stats->loss = res.value;
    stats->iterations = res.iterations;
    stats->converged = res.converged;
    stats->kkt_violation = res.kkt_violation;
    stats->active_constraints.clear();
    for (std::size_t j = 0; j < problem.dim; ++j)
      if (problem.lower[j] == 0.0 && res.theta[j] == 0.0) stats->active_constraints.push_back(j);
  }
  return objective.unpack(model, res.theta);
}

// ---- pipeline ---------------------------------------------------------------

std::vector<double> quantile_thresholds(std::span<const double> values, const FeatureSpec& spec,
                                        std::size_t bins) {
  std::vector<double> v;
  for (double x : values)
    if (!spec.is_missing(x)) v.push_back(x);
  if (v.empty() || bins < 2) return {};
  std::sort(v.begin(), v.end());
  const double lo = v.front(), hi = v.back();
  const bool above = spec.monotonicity == Monotonicity::Increasing;
  std::vector<double> cuts;
  for (std::size_t k = 1; k < bins; ++k) {
    const double q = static_cast<double>(k) / static_cast<double>(bins);
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    rank = std::clamp<std::size_t>(rank, 1, v.size());
    const double t = v[rank - 1];
    const bool constant = above ? t >= hi : t <= lo;
    if (!constant && (cuts.empty() || cuts.back() < t)) cuts.push_back(t);
  }
  return cuts;
}

Binarizer derive_binarizer(const Schema& schema, const RawDataset& data, std::size_t bins) {
  std::vector<FeatureSpec> specs = schema.features;
  std::vector<double> column(data.size());
  for (std::size_t p = 0; p < specs.size(); ++p) {
    if (!specs[p].thresholds.empty()) continue;
    for (std::size_t i = 0; i < data.size(); ++i) column[i] = data.rows[i].at(p);
    specs[p].thresholds = quantile_thresholds(column, specs[p], bins);
  }
  return Binarizer(std::move(specs));
}

TrainedModel fit_model(const Schema& schema, const RawDataset& train, const TrainConfig& config) {
  return fit_model(schema, derive_binarizer(schema, train, config.quantile_bins), train, config);
}

TrainedModel fit_model(const Schema& schema, const Binarizer& binarizer, const RawDataset& train,
                       const TrainConfig& config) {
  if (train.size() == 0) throw Error("empty training set");
  const auto X = binarize_dataset(binarizer, train.rows);
  const std::size_t K = schema.subscales.size();

  std::vector<Subscale> subscales(K);
  for (std::size_t k = 0; k < K; ++k) {
    subscales[k].name = schema.subscales[k].name;
    for (const auto& f : schema.subscales[k].features) {
      auto p = binarizer.feature_index(f);
      if (!p) throw InvalidModel("subscale " + subscales[k].name + " references unknown feature " + f);
      subscales[k].features.push_back(*p);
    }
  }

  FitReport report;
  report.subscales.resize(K);
  parallel_for(K, config.threads, [&](std::size_t k) {
    std::vector<std::size_t> cols;
    for (std::size_t p : subscales[k].features)
      for (std::size_t l = 0; l < binarizer.specs()[p].indicator_count(); ++l)
        cols.push_back(binarizer.feature_offset(p) + l);
    std::vector<bool> nonneg;
    for (std::size_t c : cols) nonneg.push_back(binarizer.is_constrained(c));
    auto fit = fit_subscale(X, cols, train.labels, nonneg, config);
    subscales[k].coefficients = std::move(fit.coefficients);
    subscales[k].bias = fit.bias;
    fit.stats.name = subscales[k].name;
    report.subscales[k] = std::move(fit.stats);
  });

  // second layer on the fitted subscale risks
  ArmModel staged(binarizer, subscales, std::vector<double>(K, 0.0), 0.0);
  std::vector<double> risks(X.rows() * K);
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t k = 0; k < K; ++k) risks[i * K + k] = staged.subscale_risk(k, X.row(i)).risk;
  auto top = fit_second_layer(risks, K, train.labels, config);
  report.second_layer = std::move(top.stats);
  ArmModel model(binarizer, std::move(subscales), std::move(top.coefficients), top.bias);

  if (config.joint_alpha > 0.0) {
    FitStats joint;
    model = fit_joint(model, X, train.labels, config, &joint);
    report.joint = std::move(joint);
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < X.rows(); ++i) correct += model.label_binary(X.row(i)) == train.labels[i];
  report.train_accuracy = static_cast<double>(correct) / static_cast<double>(X.rows());
  return {std::move(model), std::move(report)};
}

double accuracy(const ArmModel& model, const RawDataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::uint8_t> row(model.binarizer().column_count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    model.binarizer().binarize_row(data.rows[i], row);
    correct += model.label_binary(row) == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

AccuracySummary summarize(std::vector<double> xs) {
  AccuracySummary s;
  s.per_split = std::move(xs);
  if (s.per_split.empty()) return s;
  const double n = static_cast<double>(s.per_split.size());
  s.mean = std::accumulate(s.per_split.begin(), s.per_split.end(), 0.0) / n;
  double var = 0.0;
  for (double x : s.per_split) var += (x - s.mean) * (x - s.mean);
  s.stddev = s.per_split.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  return s;
}

json summary_json(const AccuracySummary& s) {
  return json{{"per_split", s.per_split}, {"mean", s.mean}, {"std", s.stddev}};
}

}  // namespace

json EvalResult::to_json() const {
  return json{{"arm", summary_json(arm)},
              {"logistic_unconstrained", summary_json(logistic)},
              {"majority", summary_json(majority)}};
}

EvalResult evaluate(const Schema& schema, const RawDataset& data, const TrainConfig& config,
                    std::size_t n_splits, double test_frac, std::uint64_t seed, const Binarizer* fixed) {
  if (data.size() == 0) throw Error("empty dataset");
  const auto splits = make_splits(data.labels, test_frac, n_splits, seed);
  std::vector<double> arm_acc, lr_acc, maj_acc;
  for (const auto& split : splits) {
    const auto train = data.subset(split.train);
    const auto test = data.subset(split.test);
    const auto binarizer = fixed ? *fixed : derive_binarizer(schema, train, config.quantile_bins);
    const auto trained = fit_model(schema, binarizer, train, config);
    arm_acc.push_back(accuracy(trained.model, test));

    const auto Xtr = binarize_dataset(binarizer, train.rows);
    const auto Xte = binarize_dataset(binarizer, test.rows);
    const auto lr = fit_unconstrained(Xtr, train.labels, config);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < Xte.rows(); ++i) {
      double z = lr.bias;
      for (std::size_t j = 0; j < Xte.originals(); ++j) z += lr.coefficients[j] * Xte(i, j);
      correct += static_cast<std::uint8_t>(z >= 0.0) == test.labels[i];
    }
    lr_acc.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));

    const std::uint8_t majority = train.positive_rate() > 0.5 ? 1 : 0;
    maj_acc.push_back(static_cast<double>(std::count(test.labels.begin(), test.labels.end(), majority)) /
                      static_cast<double>(test.size()));
  }
  return {summarize(arm_acc), summarize(lr_acc), summarize(maj_acc)};
}

Schema schema_of(const ArmModel& model, const Schema& base) {
  Schema s = base;
  s.features = model.binarizer().specs();
  s.subscales.clear();
  for (const auto& sub : model.subscales()) {
    SubscaleDef def{sub.name, {}};
    for (std::size_t p : sub.features) def.features.push_back(model.binarizer().specs()[p].name);
    s.subscales.push_back(std::move(def));
  }
  return s;
}

}  // namespace arm
