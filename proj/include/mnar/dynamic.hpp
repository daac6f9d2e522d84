#ifndef MNAR_DYNAMIC_HPP_
#define MNAR_DYNAMIC_HPP_

#include <string>

#include "mnar/analytics.hpp"
#include "mnar/core.hpp"
#include "mnar/shaping.hpp"

namespace mnar {

/// Penalty applied to h_B or h_V inside the joint objective.
enum class PenaltyMetric { identity, square, logcosh };

const char* metric_name(PenaltyMetric metric);
PenaltyMetric metric_from_name(const std::string& name);
double apply_metric(PenaltyMetric metric, double x);
/// Inverse on [0, inf); every built-in metric is strictly increasing there.
double invert_metric(PenaltyMetric metric, double y);

/// Per-cell objective w1 * E_B(h_B(alpha)) + w2 * E_V(h_V(alpha)).
struct JointObjective {
  double w1 = 1.0;
  double w2 = 0.1;
  PenaltyMetric bias_metric = PenaltyMetric::identity;
  PenaltyMetric variance_metric = PenaltyMetric::identity;

  void validate() const;
  bool identity_metrics() const {
    return bias_metric == PenaltyMetric::identity && variance_metric == PenaltyMetric::identity;
  }
};

double objective_value(const JointObjective& obj, const ShapingFunction& shaping, double p_hat, double p_true,
                       double alpha);

/// Closed-form minimizer for identity metrics and accurate propensities:
///   clamp(ln(2 (w2/w1) (1 - p)) / ln f(p), 0, 1), with p = 1 mapped to 1.
/// Throws UnsupportedMetricError for other metrics.
double alpha_opt_closed_form(const JointObjective& obj, const ShapingFunction& shaping, double p);

/// Numerical minimizer over [0, 1]: 101-point grid scan, then golden-section
/// refinement inside the bracketing grid cells.
double alpha_opt_numerical(const JointObjective& obj, const ShapingFunction& shaping, double p_hat, double p_true,
                           double tolerance = 1e-9);

/// Per-cell alpha from p_hat, treating p_hat as accurate. Identity metrics use the
/// closed form, everything else the numerical path.
LabeledMatrixd alpha_schedule(const JointObjective& obj, const ShapingFunction& shaping, const LabeledMatrixd& p_hat,
                              double tolerance = 1e-9);

/// Uniform cap on h_V at the optimal alpha: E_V^{-1}(w1 E_B(1) / w2 + E_V(0.25)),
/// i.e. w1/w2 + 0.25 for identity metrics.
double variance_cap(const JointObjective& obj);

/// Aggregate w1 * Bias + w2 * Variance of a whole estimator, for inspecting the
/// per-cell optimization against the estimator-level objective.
double aggregate_objective(const JointObjective& obj, EstimatorFamily family, const AnalyticInputs<double>& inputs);

}  // namespace mnar

#endif  // MNAR_DYNAMIC_HPP_
