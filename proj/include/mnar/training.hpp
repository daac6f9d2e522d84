#ifndef MNAR_TRAINING_HPP_
#define MNAR_TRAINING_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mnar/core.hpp"
#include "mnar/dynamic.hpp"
#include "mnar/estimators.hpp"
#include "mnar/shaping.hpp"

namespace mnar {

/// Matrix factorization with biases; predictions are sigmoid(u.v + b_u + b_i + b_0).
struct MFModel {
  Eigen::MatrixXd user_factors;  // rows x k
  Eigen::MatrixXd item_factors;  // cols x k
  Eigen::VectorXd user_bias;
  Eigen::VectorXd item_bias;
  double global_bias = 0.0;

  /// Gaussian factors with standard deviation `init_scale`, zero biases.
  static MFModel init(Eigen::Index rows, Eigen::Index cols, int k, std::uint64_t seed, double init_scale = 0.1);
  /// Same shape as `like`, every parameter zero.
  static MFModel zeros_like(const MFModel& like);

  Eigen::Index rows() const { return user_factors.rows(); }
  Eigen::Index cols() const { return item_factors.rows(); }
  int k() const { return static_cast<int>(user_factors.cols()); }

  double score(Eigen::Index u, Eigen::Index i) const {
    return user_factors.row(u).dot(item_factors.row(i)) + user_bias(u) + item_bias(i) + global_bias;
  }
  double predict(Eigen::Index u, Eigen::Index i) const;
  RowMajorMatrix<double> predict_all() const;

  bool all_finite() const;

  /// Flat view over every parameter, for finite differences and optimizers.
  Eigen::Index parameter_count() const;
  double& parameter(Eigen::Index j);
  double parameter(Eigen::Index j) const;
};

enum class OptimizerKind { adam, sgd };

const char* optimizer_name(OptimizerKind kind);
OptimizerKind optimizer_from_name(const std::string& name);

/// Observed labels, the observation mask and the propensities a loss is built from.
struct TrainingProblem {
  LabeledMatrixd labels;  // values at unobserved cells are ignored
  ObservationMask mask;
  LabeledMatrixd p_hat;

  void validate() const;
  double observed_label_mean() const;
};

/**
 * Everything that fixes a per-cell estimator loss. e = kind(y_hat - y) on observed
 * cells; e_hat = w * kind(y_hat - t), where t is `imputation_targets` when set and
 * the error spec's centre gamma otherwise.
 */
struct LossSpec {
  EstimatorFamily family = EstimatorFamily::naive;
  ErrorSpec error;
  std::optional<ShapingFunction> shaping;
  std::optional<LabeledMatrixd> alpha;
  SnipsNormalizer snips_normalizer = SnipsNormalizer::shaped;
  std::optional<RowMajorMatrix<double>> imputation_targets;

  void validate(const TrainingProblem& problem) const;
};

/**
 * Mean loss over the cells in `batch` (row-major flat indices) and, when `grad` is
 * non-null, its gradient with respect to every model parameter (written, not added).
 * Per-cell terms:
 *   naive  o e |D| / |O|        eib  o e + (1 - o) e_hat
 *   ips    o e / p_hat          dr   e_hat + o (e - e_hat) / p_hat
 *   d_ips  o e w                d_dr e_hat + o w (e - e_hat),  w = 1 / f^alpha(p_hat)
 *   snips / d_snips: the ips / d_ips terms rescaled by |B| / sum_B weight, the batch
 *   normalizer held constant.
 */
double estimator_loss(const MFModel& model, const TrainingProblem& problem, const LossSpec& loss,
                      std::span<const Eigen::Index> batch, MFModel* grad);

/// Loss over every cell of D.
double full_loss(const MFModel& model, const TrainingProblem& problem, const LossSpec& loss, MFModel* grad = nullptr);

/// Inverse-propensity-weighted imputation loss mean over observed cells of
/// (1 / p_hat)(e_hat - e)^2, differentiated with respect to the imputation model.
double imputation_loss(const MFModel& imputation, const RowMajorMatrix<double>& predictions,
                       const TrainingProblem& problem, const ErrorSpec& error, std::span<const Eigen::Index> batch,
                       MFModel* grad);

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 1e-4;
  int epochs = 50;
  int batch_size = 1024;
  int latent_dim = 8;
  double init_scale = 0.1;
  EstimatorFamily loss_family = EstimatorFamily::dr;
  JointObjective objective;
  ShapingFunction shaping = ShapingFunction::log1p();
  OptimizerKind optimizer = OptimizerKind::adam;
  SnipsNormalizer snips_normalizer = SnipsNormalizer::shaped;
  double imputation_scale = 1.0;
  std::optional<double> imputation_center;  // defaults to the observed label mean
  ErrorKind error_kind = ErrorKind::squared;
  std::optional<LabeledMatrixd> alpha_override;  // replaces the static schedule
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  MFModel model;
  std::vector<double> epoch_losses;  // full-data loss after each epoch
  std::optional<LabeledMatrixd> alpha;
};

/// Builds the LossSpec train() uses for this problem and config.
LossSpec make_loss_spec(const TrainingProblem& problem, const TrainConfig& cfg);

/// Mini-batch training over uniformly shuffled cells of D. Dynamic families use a
/// static alpha schedule computed once from p_hat. Throws DivergenceError naming the
/// epoch and batch when the loss or a parameter stops being finite.
TrainResult train(const TrainingProblem& problem, const TrainConfig& cfg);

struct JointTrainResult {
  MFModel prediction;
  MFModel imputation;
  std::vector<double> prediction_losses;
  std::vector<double> imputation_losses;
  std::optional<LabeledMatrixd> alpha;
};

/// Alternates per epoch between an imputation epoch over observed cells and a
/// prediction epoch whose e_hat uses the current imputed labels.
JointTrainResult train_joint(const TrainingProblem& problem, const TrainConfig& cfg, const TrainConfig& imputation_cfg);

using LossClosure = std::function<double(const MFModel&, MFModel*)>;

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-6),
/// numeric from central differences with step 1e-5.
double gradient_check(const MFModel& model, const LossClosure& loss, double step = 1e-5);

}  // namespace mnar

#endif  // MNAR_TRAINING_HPP_
