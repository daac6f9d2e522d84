#include "mnar/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mnar/simulation.hpp"

namespace mnar {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double error_value(ErrorKind kind, double diff) { return apply_error_kind(kind, diff); }

double error_slope(ErrorKind kind, double diff) {
  if (kind == ErrorKind::squared) return 2.0 * diff;
  return diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
}

/// Adds the chain-rule contribution of d(loss)/d(score) at cell (u, i).
void accumulate_score_gradient(const MFModel& model, MFModel& grad, Eigen::Index u, Eigen::Index i, double g) {
  grad.user_factors.row(u) += g * model.item_factors.row(i);
  grad.item_factors.row(i) += g * model.user_factors.row(u);
  grad.user_bias(u) += g;
  grad.item_bias(i) += g;
  grad.global_bias += g;
}

template <typename Fn>
void for_each_block(MFModel& m, Fn&& fn) {
  fn(m.user_factors.data(), m.user_factors.size());
  fn(m.item_factors.data(), m.item_factors.size());
  fn(m.user_bias.data(), m.user_bias.size());
  fn(m.item_bias.data(), m.item_bias.size());
  fn(&m.global_bias, Eigen::Index{1});
}

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double wd, Eigen::Index n)
      : kind_(kind), lr_(lr), wd_(wd), m_(static_cast<std::size_t>(n), 0.0), v_(static_cast<std::size_t>(n), 0.0) {}

  void step(MFModel& model, MFModel& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    std::size_t offset = 0;
    // parameters and gradients share block order, so walk them in lockstep
    std::vector<double*> grad_blocks;
    for_each_block(grad, [&](double* g, Eigen::Index) { grad_blocks.push_back(g); });
    std::size_t block = 0;
    for_each_block(model, [&](double* p, Eigen::Index n) {
      double* g = grad_blocks[block++];
      for (Eigen::Index j = 0; j < n; ++j, ++offset) {
        const double gj = g[j] + wd_ * p[j];
        if (kind_ == OptimizerKind::sgd) {
          p[j] -= lr_ * gj;
          continue;
        }
        m_[offset] = kBeta1 * m_[offset] + (1.0 - kBeta1) * gj;
        v_[offset] = kBeta2 * v_[offset] + (1.0 - kBeta2) * gj * gj;
        p[j] -= lr_ * (m_[offset] / c1) / (std::sqrt(v_[offset] / c2) + kEps);
      }
    });
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  OptimizerKind kind_;
  double lr_;
  double wd_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

void shuffle(std::vector<Eigen::Index>& idx, RngStream& rng) {
  for (std::size_t k = idx.size(); k > 1; --k) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(k));
    std::swap(idx[k - 1], idx[j]);
  }
}

using BatchLoss = std::function<double(const MFModel&, std::span<const Eigen::Index>, MFModel*)>;

void run_epoch(MFModel& model, Optimizer& opt, std::vector<Eigen::Index>& cells, int batch_size, int epoch,
               std::uint64_t seed, std::uint64_t stream, const BatchLoss& loss) {
  RngStream rng(seed, stream);
  shuffle(cells, rng);
  MFModel grad = MFModel::zeros_like(model);
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  int batch_index = 0;
  for (std::size_t start = 0; start < cells.size(); start += bs, ++batch_index) {
    const std::size_t end = std::min(cells.size(), start + bs);
    const std::span<const Eigen::Index> batch(cells.data() + start, end - start);
    const double value = loss(model, batch, &grad);
    if (!std::isfinite(value))
      throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
    opt.step(model, grad);
    if (!model.all_finite())
      throw DivergenceError("non-finite parameter at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
  }
}

std::vector<Eigen::Index> all_cells(Eigen::Index n) {
  std::vector<Eigen::Index> cells(static_cast<std::size_t>(n));
  std::iota(cells.begin(), cells.end(), Eigen::Index{0});
  return cells;
}

std::vector<Eigen::Index> observed_cells(const ObservationMask& mask) {
  std::vector<Eigen::Index> cells;
  cells.reserve(static_cast<std::size_t>(mask.observed_count()));
  for (Eigen::Index k = 0; k < mask.size(); ++k)
    if (mask.bits().data()[k]) cells.push_back(k);
  return cells;
}

bool has_imputation(EstimatorFamily f) {
  return f == EstimatorFamily::eib || f == EstimatorFamily::dr || f == EstimatorFamily::d_dr;
}

constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kShuffleStreamBase = 1;
constexpr std::uint64_t kImputationSeedSalt = 0x696d707574ULL;

}  // namespace

MFModel MFModel::init(Eigen::Index rows, Eigen::Index cols, int k, std::uint64_t seed, double init_scale) {
  if (rows < 1 || cols < 1 || k < 1) throw DomainError("MFModel::init: rows, cols and k must be positive");
  RngStream rng(seed, kInitStream);
  MFModel m;
  m.user_factors.resize(rows, k);
  m.item_factors.resize(cols, k);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (int j = 0; j < k; ++j) m.user_factors(r, j) = init_scale * rng.normal();
  for (Eigen::Index c = 0; c < cols; ++c)
    for (int j = 0; j < k; ++j) m.item_factors(c, j) = init_scale * rng.normal();
  m.user_bias = Eigen::VectorXd::Zero(rows);
  m.item_bias = Eigen::VectorXd::Zero(cols);
  return m;
}

MFModel MFModel::zeros_like(const MFModel& like) {
  MFModel m;
  m.user_factors = Eigen::MatrixXd::Zero(like.user_factors.rows(), like.user_factors.cols());
  m.item_factors = Eigen::MatrixXd::Zero(like.item_factors.rows(), like.item_factors.cols());
  m.user_bias = Eigen::VectorXd::Zero(like.user_bias.size());
  m.item_bias = Eigen::VectorXd::Zero(like.item_bias.size());
  return m;
}

double MFModel::predict(Eigen::Index u, Eigen::Index i) const { return sigmoid(score(u, i)); }

RowMajorMatrix<double> MFModel::predict_all() const {
  RowMajorMatrix<double> s = user_factors * item_factors.transpose();
  for (Eigen::Index r = 0; r < s.rows(); ++r)
    for (Eigen::Index c = 0; c < s.cols(); ++c) s(r, c) = sigmoid(s(r, c) + user_bias(r) + item_bias(c) + global_bias);
  return s;
}

bool MFModel::all_finite() const {
  return user_factors.allFinite() && item_factors.allFinite() && user_bias.allFinite() && item_bias.allFinite() &&
         std::isfinite(global_bias);
}

Eigen::Index MFModel::parameter_count() const {
  return user_factors.size() + item_factors.size() + user_bias.size() + item_bias.size() + 1;
}

double& MFModel::parameter(Eigen::Index j) {
  if (j < 0 || j >= parameter_count()) throw DimensionError("MFModel::parameter: index out of range");
  if (j < user_factors.size()) return user_factors.data()[j];
  j -= user_factors.size();
  if (j < item_factors.size()) return item_factors.data()[j];
  j -= item_factors.size();
  if (j < user_bias.size()) return user_bias.data()[j];
  j -= user_bias.size();
  if (j < item_bias.size()) return item_bias.data()[j];
  return global_bias;
}

double MFModel::parameter(Eigen::Index j) const { return const_cast<MFModel*>(this)->parameter(j); }

const char* optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw DomainError("unknown optimizer '" + name + "'");
}

void TrainingProblem::validate() const {
  detail::require_same_shape(labels, mask, "TrainingProblem");
  detail::require_same_shape(labels, p_hat, "TrainingProblem");
  if (p_hat.role() != Role::propensity) throw DomainError("TrainingProblem: p_hat must be a propensity matrix");
  if (mask.observed_count() == 0) throw EmptyObservationError("TrainingProblem: mask has no observed cells");
}

double TrainingProblem::observed_label_mean() const {
  KahanSum<double> acc;
  for (Eigen::Index k = 0; k < mask.size(); ++k)
    if (mask.bits().data()[k]) acc.add(labels.values().data()[k]);
  if (mask.observed_count() == 0) throw EmptyObservationError("observed_label_mean: no observed cells");
  return acc.value() / static_cast<double>(mask.observed_count());
}

void LossSpec::validate(const TrainingProblem& problem) const {
  error.validate();
  switch (family) {
    case EstimatorFamily::real:
    case EstimatorFamily::general:
      throw DomainError(std::string("estimator_loss: family ") + family_name(family) + " is not trainable");
    default: break;
  }
  if (is_dynamic(family)) {
    if (!shaping || !alpha) throw DomainError("estimator_loss: dynamic family needs shaping and alpha");
    detail::require_same_shape(problem.labels, *alpha, "estimator_loss");
    if (alpha->role() != Role::exponent) throw DomainError("estimator_loss: alpha must carry the exponent role");
  }
  if (imputation_targets) detail::require_same_shape(problem.labels, *imputation_targets, "estimator_loss");
}

double estimator_loss(const MFModel& model, const TrainingProblem& problem, const LossSpec& loss,
                      std::span<const Eigen::Index> batch, MFModel* grad) {
  if (batch.empty()) throw DomainError("estimator_loss: empty batch");
  if (model.rows() != problem.labels.rows() || model.cols() != problem.labels.cols())
    throw DimensionError("estimator_loss: model shape does not match the problem");
  if (grad) *grad = MFModel::zeros_like(model);

  const Eigen::Index cols = problem.labels.cols();
  const double d = static_cast<double>(problem.labels.size());
  const double naive_scale = d / static_cast<double>(problem.mask.observed_count());
  const EstimatorFamily f = loss.family;
  const bool self_normalized = f == EstimatorFamily::snips || f == EstimatorFamily::d_snips;

  auto weight = [&](Eigen::Index u, Eigen::Index i) {
    const double ph = problem.p_hat(u, i);
    if (is_dynamic(f)) return dynamic_weight(*loss.shaping, ph, (*loss.alpha)(u, i));
    return 1.0 / ph;
  };

  double batch_scale = 1.0;
  if (self_normalized) {
    KahanSum<double> norm;
    for (Eigen::Index k : batch) {
      const Eigen::Index u = k / cols;
      const Eigen::Index i = k % cols;
      if (!problem.mask.observed(u, i)) continue;
      const bool shaped = f == EstimatorFamily::snips || loss.snips_normalizer == SnipsNormalizer::shaped;
      norm.add(shaped ? weight(u, i) : 1.0 / problem.p_hat(u, i));
    }
    batch_scale = norm.value() > 0.0 ? static_cast<double>(batch.size()) / norm.value() : 0.0;
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double w_imp = loss.error.imputation_scale;
  KahanSum<double> total;
  for (Eigen::Index k : batch) {
    const Eigen::Index u = k / cols;
    const Eigen::Index i = k % cols;
    const double y_hat = model.predict(u, i);
    const bool o = problem.mask.observed(u, i);
    const double t = loss.imputation_targets ? (*loss.imputation_targets)(u, i) : loss.error.imputation_center;
    const double e_hat = w_imp * error_value(loss.error.kind, y_hat - t);
    const double de_hat = w_imp * error_slope(loss.error.kind, y_hat - t);
    double e = 0.0;
    double de = 0.0;
    if (o) {
      const double y = problem.labels(u, i);
      e = error_value(loss.error.kind, y_hat - y);
      de = error_slope(loss.error.kind, y_hat - y);
    }

    double term = 0.0;
    double slope = 0.0;
    switch (f) {
      case EstimatorFamily::naive:
        if (o) {
          term = e * naive_scale;
          slope = de * naive_scale;
        }
        break;
      case EstimatorFamily::eib:
        term = o ? e : e_hat;
        slope = o ? de : de_hat;
        break;
      case EstimatorFamily::ips:
      case EstimatorFamily::d_ips:
        if (o) {
          const double w = weight(u, i);
          term = w * e;
          slope = w * de;
        }
        break;
      case EstimatorFamily::dr:
      case EstimatorFamily::d_dr: {
        term = e_hat;
        slope = de_hat;
        if (o) {
          const double w = weight(u, i);
          term += w * (e - e_hat);
          slope += w * (de - de_hat);
        }
        break;
      }
      case EstimatorFamily::snips:
      case EstimatorFamily::d_snips:
        if (o) {
          const double w = weight(u, i) * batch_scale;
          term = w * e;
          slope = w * de;
        }
        break;
      default:
        throw DomainError(std::string("estimator_loss: family ") + family_name(f) + " is not trainable");
    }
    total.add(term);
    if (grad && slope != 0.0) accumulate_score_gradient(model, *grad, u, i, slope * y_hat * (1.0 - y_hat) * inv_b);
  }
  return total.value() * inv_b;
}

double full_loss(const MFModel& model, const TrainingProblem& problem, const LossSpec& loss, MFModel* grad) {
  const auto cells = all_cells(problem.labels.size());
  return estimator_loss(model, problem, loss, cells, grad);
}

double imputation_loss(const MFModel& imputation, const RowMajorMatrix<double>& predictions,
                       const TrainingProblem& problem, const ErrorSpec& error, std::span<const Eigen::Index> batch,
                       MFModel* grad) {
  if (batch.empty()) throw DomainError("imputation_loss: empty batch");
  detail::require_same_shape(problem.labels, predictions, "imputation_loss");
  if (grad) *grad = MFModel::zeros_like(imputation);
  const Eigen::Index cols = problem.labels.cols();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  KahanSum<double> total;
  for (Eigen::Index k : batch) {
    const Eigen::Index u = k / cols;
    const Eigen::Index i = k % cols;
    if (!problem.mask.observed(u, i)) continue;
    const double y_hat = predictions(u, i);
    const double y_imp = imputation.predict(u, i);
    const double inv_p = 1.0 / problem.p_hat(u, i);
    const double e = error_value(error.kind, y_hat - problem.labels(u, i));
    const double e_hat = error.imputation_scale * error_value(error.kind, y_hat - y_imp);
    const double gap = e_hat - e;
    total.add(inv_p * gap * gap);
    if (grad) {
      const double de_hat = -error.imputation_scale * error_slope(error.kind, y_hat - y_imp);
      const double slope = 2.0 * inv_p * gap * de_hat;
      if (slope != 0.0) accumulate_score_gradient(imputation, *grad, u, i, slope * y_imp * (1.0 - y_imp) * inv_b);
    }
  }
  return total.value() * inv_b;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
  if (!(imputation_scale > 0.0)) throw ConfigError("imputation_scale must be positive");
  objective.validate();
}

LossSpec make_loss_spec(const TrainingProblem& problem, const TrainConfig& cfg) {
  LossSpec loss;
  loss.family = cfg.loss_family;
  loss.error.kind = cfg.error_kind;
  loss.error.imputation_scale = cfg.imputation_scale;
  loss.error.imputation_center = cfg.imputation_center.value_or(problem.observed_label_mean());
  loss.snips_normalizer = cfg.snips_normalizer;
  if (is_dynamic(cfg.loss_family)) {
    loss.shaping = cfg.shaping;
    loss.alpha = cfg.alpha_override ? *cfg.alpha_override : alpha_schedule(cfg.objective, cfg.shaping, problem.p_hat);
  }
  loss.validate(problem);
  return loss;
}

TrainResult train(const TrainingProblem& problem, const TrainConfig& cfg) {
  problem.validate();
  cfg.validate();
  const LossSpec loss = make_loss_spec(problem, cfg);
  TrainResult out;
  out.model = MFModel::init(problem.labels.rows(), problem.labels.cols(), cfg.latent_dim, cfg.seed, cfg.init_scale);
  out.alpha = loss.alpha;
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.weight_decay, out.model.parameter_count());
  auto cells = all_cells(problem.labels.size());
  const BatchLoss batch_loss = [&](const MFModel& m, std::span<const Eigen::Index> b, MFModel* g) {
    return estimator_loss(m, problem, loss, b, g);
  };
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    run_epoch(out.model, opt, cells, cfg.batch_size, epoch, cfg.seed, kShuffleStreamBase + static_cast<std::uint64_t>(epoch),
              batch_loss);
    out.epoch_losses.push_back(full_loss(out.model, problem, loss));
  }
  return out;
}

JointTrainResult train_joint(const TrainingProblem& problem, const TrainConfig& cfg, const TrainConfig& imputation_cfg) {
  problem.validate();
  cfg.validate();
  imputation_cfg.validate();
  if (!has_imputation(cfg.loss_family))
    throw DomainError(std::string("train_joint: family ") + family_name(cfg.loss_family) + " has no imputation term");

  LossSpec loss = make_loss_spec(problem, cfg);
  JointTrainResult out;
  out.alpha = loss.alpha;
  const Eigen::Index rows = problem.labels.rows();
  const Eigen::Index cols = problem.labels.cols();
  out.prediction = MFModel::init(rows, cols, cfg.latent_dim, cfg.seed, cfg.init_scale);
  const std::uint64_t imp_seed = mix_seed(imputation_cfg.seed, kImputationSeedSalt);
  out.imputation = MFModel::init(rows, cols, imputation_cfg.latent_dim, imp_seed, imputation_cfg.init_scale);

  Optimizer pred_opt(cfg.optimizer, cfg.learning_rate, cfg.weight_decay, out.prediction.parameter_count());
  Optimizer imp_opt(imputation_cfg.optimizer, imputation_cfg.learning_rate, imputation_cfg.weight_decay,
                    out.imputation.parameter_count());
  auto pred_cells = all_cells(problem.labels.size());
  auto imp_cells = observed_cells(problem.mask);
  const auto all_observed = imp_cells;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const RowMajorMatrix<double> predictions = out.prediction.predict_all();
    const BatchLoss imp_loss = [&](const MFModel& m, std::span<const Eigen::Index> b, MFModel* g) {
      return imputation_loss(m, predictions, problem, loss.error, b, g);
    };
    run_epoch(out.imputation, imp_opt, imp_cells, imputation_cfg.batch_size, epoch, imp_seed,
              kShuffleStreamBase + static_cast<std::uint64_t>(epoch), imp_loss);
    out.imputation_losses.push_back(imputation_loss(out.imputation, predictions, problem, loss.error, all_observed, nullptr));

    loss.imputation_targets = out.imputation.predict_all();
    const BatchLoss pred_loss = [&](const MFModel& m, std::span<const Eigen::Index> b, MFModel* g) {
      return estimator_loss(m, problem, loss, b, g);
    };
    run_epoch(out.prediction, pred_opt, pred_cells, cfg.batch_size, epoch, cfg.seed,
              kShuffleStreamBase + static_cast<std::uint64_t>(epoch), pred_loss);
    out.prediction_losses.push_back(full_loss(out.prediction, problem, loss));
  }
  return out;
}

double gradient_check(const MFModel& model, const LossClosure& loss, double step) {
  if (!(step > 0.0)) throw DomainError("gradient_check: step must be positive");
  MFModel grad = MFModel::zeros_like(model);
  loss(model, &grad);
  MFModel probe = model;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < probe.parameter_count(); ++j) {
    const double original = probe.parameter(j);
    probe.parameter(j) = original + step;
    const double up = loss(probe, nullptr);
    probe.parameter(j) = original - step;
    const double down = loss(probe, nullptr);
    probe.parameter(j) = original;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = grad.parameter(j);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace mnar
