#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "arm/binarize.hpp"
#include "arm/dataset.hpp"
#include "arm/model.hpp"
#include "arm/schema.hpp"

namespace arm {

struct TrainConfig {
  /// Ridge strength; unset means 1e-4 * N.
  std::optional<double> l2_lambda;
  std::size_t max_iters = 5000;
  double grad_tol = 1e-6;
  /// Weight of the global loss in the joint objective; 0 skips joint training.
  double joint_alpha = 0.0;
  std::uint64_t seed = 0;
  double initial_step = 1.0;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  std::size_t max_backtracks = 60;
  /// Barzilai-Borwein trial steps; false keeps the last accepted step.
  bool bb_steps = true;
  /// Workers for independent subscale fits.
  std::size_t threads = 1;
  /// Number of quantile cut points for features without explicit thresholds.
  std::size_t quantile_bins = 10;

  double lambda_for(std::size_t n) const {
    return l2_lambda ? *l2_lambda : 1e-4 * static_cast<double>(n);
  }
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);

/// Outcome of one constrained optimisation.
struct FitStats {
  std::string name;
  double loss = 0.0;  ///< final objective
  std::size_t iterations = 0;
  bool converged = false;
  double kkt_violation = 0.0;
  /// Non-negative coefficients sitting exactly at zero.
  std::vector<std::size_t> active_constraints;
};

struct FitReport {
  std::vector<FitStats> subscales;
  FitStats second_layer;
  std::optional<FitStats> joint;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;

  bool converged() const;
  nlohmann::json to_json() const;
};

// ---- box-constrained projected gradient -----------------------------------

/// Smooth objective over a box. `eval` writes the gradient and returns the value.
struct BoxProblem {
  std::size_t dim = 0;
  std::vector<double> lower;
  std::vector<double> upper;
  std::function<double(std::span<const double> theta, std::span<double> grad)> eval;
};

struct SolveResult {
  std::vector<double> theta;
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double kkt_violation = 0.0;
  /// Objective after every accepted step (first entry is the start).
  std::vector<double> trace;
};

/// Largest violation of the first-order conditions: |g| in the interior,
/// max(0, -g) at a lower bound, max(0, g) at an upper bound.
double kkt_violation(const BoxProblem& problem, std::span<const double> theta,
                     std::span<const double> grad);

/// Projected gradient with Armijo backtracking along the projection arc.
/// The objective never increases between accepted iterates.
SolveResult projected_gradient(const BoxProblem& problem, std::vector<double> theta0,
                               const TrainConfig& config, bool keep_trace = false);

// ---- logistic pieces ------------------------------------------------------

/// Grouped logistic data in compressed sparse rows: row i stands for
/// `count[i]` observations of which `positives[i]` are labelled 1.
struct LogisticData {
  std::size_t dim = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> col;
  std::vector<double> val;
  std::vector<double> count;
  std::vector<double> positives;

  std::size_t rows() const { return count.size(); }
  double total() const;
  void add_row(std::span<const double> dense, double count, double positives);
};

/// Collapses identical binary rows of `columns` into weighted rows.
LogisticData group_binary_rows(const BinarizedMatrix& X, std::span<const std::size_t> columns,
                               std::span<const std::uint8_t> labels);

/// (1/N) [ sum_i count_i * softplus(z_i) - positives_i * z_i + (lambda/2)|beta|^2 ]
/// with z_i = bias + x_i . beta and theta = [beta..., bias]. Intercepts are not penalised.
double logistic_objective(const LogisticData& data, double lambda, std::span<const double> theta,
                          std::span<double> grad);

BoxProblem logistic_box_problem(const LogisticData& data, double lambda,
                                const std::vector<bool>& nonneg);

struct LinearFit {
  std::vector<double> coefficients;
  double bias = 0.0;
  FitStats stats;
};

/// Regularised logistic fit of one subscale on the given original columns;
/// `nonneg[j]` pins coefficient j to [0, inf).
LinearFit fit_subscale(const BinarizedMatrix& X, std::span<const std::size_t> columns,
                       std::span<const std::uint8_t> labels, const std::vector<bool>& nonneg,
                       const TrainConfig& config);

/// Logistic fit over subscale risks (N x K, row-major) with weights >= 0.
LinearFit fit_second_layer(std::span<const double> risks, std::size_t K,
                           std::span<const std::uint8_t> labels, const TrainConfig& config);

/// Unconstrained ridge-logistic baseline on all original binary columns.
LinearFit fit_unconstrained(const BinarizedMatrix& X, std::span<const std::uint8_t> labels,
                            const TrainConfig& config);

// ---- joint objective -------------------------------------------------------

/// alpha * GlobalLoss + (1 - alpha) * mean_k SubscaleLoss_k over every
/// parameter of the model, laid out as [beta^1, b^1, ..., beta^K, b^K, gamma..., gamma_0].
class JointObjective {
 public:
  JointObjective(const ArmModel& model, const BinarizedMatrix& X,
                 std::span<const std::uint8_t> labels, double alpha, double lambda);

  std::size_t dim() const { return dim_; }
  std::vector<double> pack(const ArmModel& model) const;
  ArmModel unpack(const ArmModel& like, std::span<const double> theta) const;
  double operator()(std::span<const double> theta, std::span<double> grad) const;
  BoxProblem box_problem() const;

 private:
  struct Block {
    std::size_t offset = 0;  ///< first coefficient in theta
    std::size_t width = 0;   ///< number of coefficients (bias follows)
    std::vector<bool> nonneg;
    LogisticData patterns;   ///< unique rows, counts, positives
    std::vector<std::size_t> row_pattern;
  };
  std::vector<Block> blocks_;
  std::vector<std::uint8_t> labels_;
  std::size_t gamma_offset_ = 0;
  std::size_t dim_ = 0;
  double alpha_;
  double lambda_;
};

/// Continues from a two-stage model, minimising the joint objective.
ArmModel fit_joint(const ArmModel& model, const BinarizedMatrix& X,
                   std::span<const std::uint8_t> labels, const TrainConfig& config,
                   FitStats* stats = nullptr);

// ---- full pipeline ---------------------------------------------------------

/// Cut points at the empirical quantiles k/bins (nearest rank) of the
/// non-missing values, deduplicated, dropping cuts whose indicator is
/// constant on the data.
std::vector<double> quantile_thresholds(std::span<const double> values, const FeatureSpec& spec,
                                        std::size_t bins);

/// Fills in thresholds for features that have none.
Binarizer derive_binarizer(const Schema& schema, const RawDataset& data, std::size_t bins);

struct TrainedModel {
  ArmModel model;
  FitReport report;
};

/// Binarize, fit each subscale independently, fit the second layer, then
/// optionally the joint objective.
TrainedModel fit_model(const Schema& schema, const RawDataset& train, const TrainConfig& config);

/// Same, but keeps the thresholds of an existing binarizer.
TrainedModel fit_model(const Schema& schema, const Binarizer& binarizer, const RawDataset& train,
                       const TrainConfig& config);

double accuracy(const ArmModel& model, const RawDataset& data);

struct AccuracySummary {
  std::vector<double> per_split;
  double mean = 0.0;
  double stddev = 0.0;
};

struct EvalResult {
  AccuracySummary arm;
  AccuracySummary logistic;  ///< unconstrained logistic on binarized features
  AccuracySummary majority;
  nlohmann::json to_json() const;
};

/// Random train/test splits; ARM and baselines are refit on every training part.
/// When `fixed` is given its thresholds are reused, otherwise they are derived
/// from each training part. Throws SingleClassDataset.
EvalResult evaluate(const Schema& schema, const RawDataset& data, const TrainConfig& config,
                    std::size_t n_splits = 5, double test_frac = 0.2, std::uint64_t seed = 7,
                    const Binarizer* fixed = nullptr);

/// Schema matching an existing model (features, thresholds and partition).
Schema schema_of(const ArmModel& model, const Schema& base);

}  // namespace arm
