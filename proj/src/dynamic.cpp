#include "mnar/dynamic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mnar {

const char* metric_name(PenaltyMetric metric) {
  switch (metric) {
    case PenaltyMetric::identity: return "identity";
    case PenaltyMetric::square: return "square";
    case PenaltyMetric::logcosh: return "logcosh";
  }
  return "unknown";
}

PenaltyMetric metric_from_name(const std::string& name) {
  if (name == "identity") return PenaltyMetric::identity;
  if (name == "square") return PenaltyMetric::square;
  if (name == "logcosh") return PenaltyMetric::logcosh;
  throw DomainError("unknown penalty metric '" + name + "'");
}

double apply_metric(PenaltyMetric metric, double x) {
  switch (metric) {
    case PenaltyMetric::identity: return x;
    case PenaltyMetric::square: return x * x;
    case PenaltyMetric::logcosh: {
      // log(cosh(x)) = |x| + log1p(exp(-2|x|)) - log 2, stable for large |x|
      const double a = std::abs(x);
      return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
    }
  }
  throw UnsupportedMetricError("unknown metric");
}

double invert_metric(PenaltyMetric metric, double y) {
  if (!(y >= 0.0)) throw DomainError("invert_metric: argument must be >= 0");
  switch (metric) {
    case PenaltyMetric::identity: return y;
    case PenaltyMetric::square: return std::sqrt(y);
    case PenaltyMetric::logcosh: {
      // cosh(x) = exp(y)  =>  x = y + log(1 + sqrt(1 - exp(-2y)))
      return y + std::log1p(std::sqrt(-std::expm1(-2.0 * y)));
    }
  }
  throw UnsupportedMetricError("metric is not invertible");
}

void JointObjective::validate() const {
  if (!(w1 > 0.0) || !std::isfinite(w1)) throw DomainError("joint objective: w1 must be positive and finite");
  if (!(w2 > 0.0) || !std::isfinite(w2)) throw DomainError("joint objective: w2 must be positive and finite");
}

double objective_value(const JointObjective& obj, const ShapingFunction& shaping, double p_hat, double p_true,
                       double alpha) {
  obj.validate();
  return obj.w1 * apply_metric(obj.bias_metric, h_B(shaping, p_hat, p_true, alpha)) +
         obj.w2 * apply_metric(obj.variance_metric, h_V(shaping, p_hat, p_true, alpha));
}

double alpha_opt_closed_form(const JointObjective& obj, const ShapingFunction& shaping, double p) {
  obj.validate();
  if (!obj.identity_metrics())
    throw UnsupportedMetricError("closed-form alpha requires identity metrics; use alpha_opt_numerical");
  if (!(p > 0.0 && p <= 1.0)) throw DomainError("alpha_opt_closed_form: p outside (0,1]");
  const double f = eval_f(shaping, p);
  if (p == 1.0 || f >= 1.0) return 1.0;
  const double ratio = std::log(2.0 * (obj.w2 / obj.w1) * (1.0 - p)) / std::log(f);
  // + 0.0 folds a -0.0 quotient into +0.0
  return std::clamp(ratio, 0.0, 1.0) + 0.0;
}

double alpha_opt_numerical(const JointObjective& obj, const ShapingFunction& shaping, double p_hat, double p_true,
                           double tolerance) {
  obj.validate();
  if (!(tolerance > 0.0)) throw DomainError("alpha_opt_numerical: tolerance must be positive");
  constexpr int kSeeds = 101;
  auto value = [&](double a) { return objective_value(obj, shaping, p_hat, p_true, a); };

  int best = 0;
  double best_value = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kSeeds; ++k) {
    const double v = value(static_cast<double>(k) / (kSeeds - 1));
    if (!std::isfinite(v)) throw EvaluationError("alpha_opt_numerical: non-finite objective on the seed grid");
    if (v < best_value) {
      best_value = v;
      best = k;
    }
  }

  double lo = static_cast<double>(std::max(best - 1, 0)) / (kSeeds - 1);
  double hi = static_cast<double>(std::min(best + 1, kSeeds - 1)) / (kSeeds - 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = value(x1);
  double f2 = value(x2);
  while (hi - lo > tolerance) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = value(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = value(x2);
    }
  }
  // the bracket may sit against an endpoint that beats the interior
  double result = 0.5 * (lo + hi);
  double result_value = value(result);
  for (double edge : {0.0, 1.0}) {
    const double v = value(edge);
    if (v < result_value) {
      result = edge;
      result_value = v;
    }
  }
  return result;
}

LabeledMatrixd alpha_schedule(const JointObjective& obj, const ShapingFunction& shaping, const LabeledMatrixd& p_hat,
                              double tolerance) {
  obj.validate();
  if (p_hat.role() != Role::propensity) throw DomainError("alpha_schedule: p_hat must be a propensity matrix");
  const bool closed = obj.identity_metrics();
  RowMajorMatrix<double> alpha(p_hat.rows(), p_hat.cols());
  for (Eigen::Index r = 0; r < p_hat.rows(); ++r) {
    for (Eigen::Index c = 0; c < p_hat.cols(); ++c) {
      const double p = p_hat(r, c);
      alpha(r, c) = closed ? alpha_opt_closed_form(obj, shaping, p) : alpha_opt_numerical(obj, shaping, p, p, tolerance);
    }
  }
  return LabeledMatrixd(std::move(alpha), Role::exponent);
}

double variance_cap(const JointObjective& obj) {
  obj.validate();
  const double target = obj.w1 * apply_metric(obj.bias_metric, 1.0) / obj.w2 + apply_metric(obj.variance_metric, 0.25);
  return invert_metric(obj.variance_metric, target);
}

double aggregate_objective(const JointObjective& obj, EstimatorFamily family, const AnalyticInputs<double>& inputs) {
  obj.validate();
  const auto report = bias_variance_report(family, inputs);
  return obj.w1 * apply_metric(obj.bias_metric, report.bias) + obj.w2 * apply_metric(obj.variance_metric, report.variance);
}

}  // namespace mnar
