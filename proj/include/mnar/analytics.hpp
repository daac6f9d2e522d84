#ifndef MNAR_ANALYTICS_HPP_
#define MNAR_ANALYTICS_HPP_

#include <cmath>
#include <optional>
#include <span>
#include <string>

#include "mnar/core.hpp"
#include "mnar/estimators.hpp"
#include "mnar/shaping.hpp"

namespace mnar {

/// Bias determining factor 1 - p / f^alpha(p_hat) of the dynamic estimators.
inline double h_B(const ShapingFunction& shaping, double p_hat, double p_true, double alpha) {
  if (!(p_true >= 0.0 && p_true <= 1.0)) throw DomainError("h_B: p_true outside [0,1]");
  return 1.0 - p_true / eval_f_alpha(shaping, p_hat, alpha);
}

/// Variance determining factor p (1 - p) / f^(2 alpha)(p_hat).
inline double h_V(const ShapingFunction& shaping, double p_hat, double p_true, double alpha) {
  if (!(p_true >= 0.0 && p_true <= 1.0)) throw DomainError("h_V: p_true outside [0,1]");
  const double fa = eval_f_alpha(shaping, p_hat, alpha);
  return p_true * (1.0 - p_true) / (fa * fa);
}

/// Inputs of the closed-form analysis. p_true is only known in simulation settings.
template <typename Scalar>
struct AnalyticInputs {
  LabeledMatrix<Scalar> e;
  LabeledMatrix<Scalar> e_hat;
  LabeledMatrix<Scalar> p_true;
  LabeledMatrix<Scalar> p_hat;
  std::optional<ShapingFunction> shaping;       // dynamic families
  std::optional<LabeledMatrix<Scalar>> alpha;   // dynamic families
  std::optional<double> mask_size;              // |O| for the naive family
};

/// `exact` is 1/|D| |sum (1 - |D| p / |O|) e| with |O| held fixed (the default);
/// `compat` selects the older 1/|O| |sum (1 - p) e| form.
enum class NaiveBiasConvention { exact, compat };

template <typename Scalar>
struct BiasVarianceReport {
  EstimatorFamily estimator = EstimatorFamily::naive;
  Scalar bias{0};
  Scalar variance{0};
  // bias = |sum B z| / |D|, variance = sum V z^2 / |D|^2, with z = e or delta.
  RowMajorMatrix<Scalar> per_cell_bias_factor;
  RowMajorMatrix<Scalar> per_cell_variance_factor;
};

namespace detail {

template <typename Scalar>
void check_inputs(const AnalyticInputs<Scalar>& in, const char* what) {
  require_same_shape(in.e, in.e_hat, what);
  require_same_shape(in.e, in.p_true, what);
  require_same_shape(in.e, in.p_hat, what);
  if (in.p_hat.role() != Role::propensity) throw DomainError(std::string(what) + ": p_hat must be a propensity matrix");
  for (Eigen::Index k = 0; k < in.p_true.size(); ++k) {
    const Scalar p = in.p_true.values().data()[k];
    if (!(p >= Scalar(0) && p <= Scalar(1))) throw DomainError(std::string(what) + ": p_true outside [0,1]");
  }
}

inline bool uses_deviation(EstimatorFamily f) {
  return f == EstimatorFamily::eib || f == EstimatorFamily::dr || f == EstimatorFamily::d_dr;
}

template <typename Scalar>
Scalar observed_size(const AnalyticInputs<Scalar>& in) {
  if (!in.mask_size || !(*in.mask_size > 0.0))
    throw EmptyObservationError("naive closed form requires |O| > 0");
  return static_cast<Scalar>(*in.mask_size);
}

}  // namespace detail

/// Per-cell bias and variance factors plus the aggregated closed forms. `real` reports
/// zeros; snips, d_snips and general have no closed form and throw DomainError.
template <typename Scalar>
BiasVarianceReport<Scalar> bias_variance_report(EstimatorFamily family, const AnalyticInputs<Scalar>& in,
                                                NaiveBiasConvention convention = NaiveBiasConvention::exact) {
  detail::check_inputs(in, "bias_variance_report");
  const Eigen::Index rows = in.e.rows();
  const Eigen::Index cols = in.e.cols();
  const Scalar d = static_cast<Scalar>(in.e.size());
  BiasVarianceReport<Scalar> report;
  report.estimator = family;
  report.per_cell_bias_factor.resize(rows, cols);
  report.per_cell_variance_factor.resize(rows, cols);

  if (is_dynamic(family) && (!in.shaping || !in.alpha))
    throw DomainError("bias_variance_report: dynamic family needs shaping and alpha");
  if (in.alpha) detail::require_same_shape(in.e, *in.alpha, "bias_variance_report");

  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Scalar p = in.p_true(r, c);
      const Scalar ph = in.p_hat(r, c);
      const Scalar bern = p * (Scalar(1) - p);
      Scalar b{0};
      Scalar v{0};
      switch (family) {
        case EstimatorFamily::real:
          break;
        case EstimatorFamily::naive: {
          const Scalar m = detail::observed_size(in);
          b = convention == NaiveBiasConvention::exact ? Scalar(1) - d * p / m : (d / m) * (Scalar(1) - p);
          v = bern * d * d / (m * m);
          break;
        }
        case EstimatorFamily::eib:
          b = Scalar(1) - p;
          v = bern;
          break;
        case EstimatorFamily::ips:
        case EstimatorFamily::dr:
          b = Scalar(1) - p / ph;
          v = bern / (ph * ph);
          break;
        case EstimatorFamily::d_ips:
        case EstimatorFamily::d_dr: {
          const double a = static_cast<double>((*in.alpha)(r, c));
          b = static_cast<Scalar>(h_B(*in.shaping, static_cast<double>(ph), static_cast<double>(p), a));
          v = static_cast<Scalar>(h_V(*in.shaping, static_cast<double>(ph), static_cast<double>(p), a));
          break;
        }
        default:
          throw DomainError(std::string("no closed-form bias/variance for family ") + family_name(family));
      }
      report.per_cell_bias_factor(r, c) = b;
      report.per_cell_variance_factor(r, c) = v;
    }
  }

  const bool deviation = detail::uses_deviation(family);
  KahanSum<Scalar> bias_sum;
  KahanSum<Scalar> var_sum;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Scalar z = deviation ? in.e(r, c) - in.e_hat(r, c) : in.e(r, c);
      bias_sum.add(report.per_cell_bias_factor(r, c) * z);
      var_sum.add(report.per_cell_variance_factor(r, c) * z * z);
    }
  }
  report.bias = std::abs(bias_sum.value()) / d;
  report.variance = var_sum.value() / (d * d);
  return report;
}

template <typename Scalar>
Scalar closed_form_bias(EstimatorFamily family, const AnalyticInputs<Scalar>& in,
                        NaiveBiasConvention convention = NaiveBiasConvention::exact) {
  return bias_variance_report(family, in, convention).bias;
}

template <typename Scalar>
Scalar closed_form_variance(EstimatorFamily family, const AnalyticInputs<Scalar>& in) {
  return bias_variance_report(family, in).variance;
}

/// E_O[L] under independent Bernoulli(p_true) observation; the naive family uses the fixed |O|.
template <typename Scalar>
Scalar closed_form_mean(EstimatorFamily family, const AnalyticInputs<Scalar>& in) {
  detail::check_inputs(in, "closed_form_mean");
  if (is_dynamic(family) && (!in.shaping || !in.alpha))
    throw DomainError("closed_form_mean: dynamic family needs shaping and alpha");
  const Scalar d = static_cast<Scalar>(in.e.size());
  KahanSum<Scalar> acc;
  for (Eigen::Index r = 0; r < in.e.rows(); ++r) {
    for (Eigen::Index c = 0; c < in.e.cols(); ++c) {
      const Scalar p = in.p_true(r, c);
      const Scalar e = in.e(r, c);
      const Scalar eh = in.e_hat(r, c);
      switch (family) {
        case EstimatorFamily::real: acc.add(e); break;
        case EstimatorFamily::naive: acc.add(p * e * d / detail::observed_size(in)); break;
        case EstimatorFamily::eib: acc.add(p * e + (Scalar(1) - p) * eh); break;
        case EstimatorFamily::ips: acc.add(p / in.p_hat(r, c) * e); break;
        case EstimatorFamily::dr: acc.add(eh + p / in.p_hat(r, c) * (e - eh)); break;
        case EstimatorFamily::d_ips:
        case EstimatorFamily::d_dr: {
          const Scalar w = dynamic_weight(*in.shaping, in.p_hat(r, c), (*in.alpha)(r, c));
          acc.add(family == EstimatorFamily::d_ips ? p * w * e : eh + p * w * (e - eh));
          break;
        }
        default:
          throw DomainError(std::string("no closed-form mean for family ") + family_name(family));
      }
    }
  }
  return acc.value() / d;
}

/// Denominator under the square root of the tail bound. `squared` (2|D|^2) is the
/// Hoeffding-consistent form; `linear` (2|D|) reproduces the alternative D-DR display.
enum class TailDenominator { squared, linear };

namespace detail {

template <typename Scalar>
Scalar shaped_square_sum(const LabeledMatrix<Scalar>& z, const LabeledMatrix<Scalar>& p_hat,
                         const ShapingFunction& shaping, const LabeledMatrix<Scalar>& alpha) {
  require_same_shape(z, p_hat, "tail bound");
  require_same_shape(z, alpha, "tail bound");
  KahanSum<Scalar> acc;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const Scalar t = z(r, c) * dynamic_weight(shaping, p_hat(r, c), alpha(r, c));
      acc.add(t * t);
    }
  }
  return acc.value();
}

inline double hoeffding_radius(double log_term, double square_sum, double d, TailDenominator denom) {
  const double scale = denom == TailDenominator::squared ? 2.0 * d * d : 2.0 * d;
  return std::sqrt(log_term / scale * square_sum);
}

}  // namespace detail

/// Deviation bound |L - E[L]| <= sqrt(ln(2/rho) / (2|D|^2) * sum (z / f^alpha(p_hat))^2),
/// holding with probability at least 1 - rho. z is e for d_ips and delta for d_dr.
template <typename Scalar>
Scalar tail_bound(EstimatorFamily family, const LabeledMatrix<Scalar>& z, const LabeledMatrix<Scalar>& p_hat,
                  const ShapingFunction& shaping, const LabeledMatrix<Scalar>& alpha, double rho,
                  TailDenominator denominator = TailDenominator::squared) {
  if (family != EstimatorFamily::d_ips && family != EstimatorFamily::d_dr)
    throw DomainError("tail_bound: family must be d_ips or d_dr");
  if (!(rho > 0.0 && rho < 1.0)) throw DomainError("tail_bound: rho outside (0,1)");
  const double sq = static_cast<double>(detail::shaped_square_sum(z, p_hat, shaping, alpha));
  return static_cast<Scalar>(
      detail::hoeffding_radius(std::log(2.0 / rho), sq, static_cast<double>(z.size()), denominator));
}

struct BoundReport {
  double rho = 0.0;
  long long hypothesis_count = 1;
  double tail_bound = 0.0;      // single-hypothesis deviation bound for the worst-case errors
  double point_estimate = 0.0;
  double bias_term = 0.0;
  double variance_term = 0.0;
  double generalization_bound = 0.0;  // point_estimate + bias_term + variance_term
};

/// Generalization bound over a finite hypothesis space. The caller supplies the
/// errors (or deviations) of the optimal hypothesis (z_minus) and of the
/// worst-case hypothesis (z_plus); the space itself is never enumerated.
template <typename Scalar>
BoundReport generalization_bound(EstimatorFamily family, double point_estimate, const LabeledMatrix<Scalar>& z_minus,
                                 const LabeledMatrix<Scalar>& z_plus, const LabeledMatrix<Scalar>& p_true,
                                 const LabeledMatrix<Scalar>& p_hat, const ShapingFunction& shaping,
                                 const LabeledMatrix<Scalar>& alpha, double rho, long long hypothesis_count) {
  if (family != EstimatorFamily::d_ips && family != EstimatorFamily::d_dr)
    throw DomainError("generalization_bound: family must be d_ips or d_dr");
  if (hypothesis_count < 1) throw DomainError("generalization_bound: |H| must be >= 1");
  if (!(rho > 0.0 && rho < 1.0)) throw DomainError("generalization_bound: rho outside (0,1)");
  detail::require_same_shape(z_minus, z_plus, "generalization_bound");
  detail::require_same_shape(z_minus, p_true, "generalization_bound");
  detail::require_same_shape(z_minus, p_hat, "generalization_bound");
  detail::require_same_shape(z_minus, alpha, "generalization_bound");

  const double d = static_cast<double>(z_minus.size());
  KahanSum<double> bias;
  for (Eigen::Index r = 0; r < z_minus.rows(); ++r) {
    for (Eigen::Index c = 0; c < z_minus.cols(); ++c) {
      const double hb = h_B(shaping, static_cast<double>(p_hat(r, c)), static_cast<double>(p_true(r, c)),
                            static_cast<double>(alpha(r, c)));
      bias.add(std::abs(hb * static_cast<double>(z_minus(r, c))));
    }
  }
  const double sq = static_cast<double>(detail::shaped_square_sum(z_plus, p_hat, shaping, alpha));

  BoundReport out;
  out.rho = rho;
  out.hypothesis_count = hypothesis_count;
  out.point_estimate = point_estimate;
  out.tail_bound = detail::hoeffding_radius(std::log(2.0 / rho), sq, d, TailDenominator::squared);
  out.bias_term = bias.value() / d;
  out.variance_term = detail::hoeffding_radius(std::log(2.0 * static_cast<double>(hypothesis_count) / rho), sq, d,
                                               TailDenominator::squared);
  out.generalization_bound = point_estimate + out.bias_term + out.variance_term;
  return out;
}

struct RegularizerAnalysis {
  double cov = 0.0;
  double var_reg = 0.0;
  double lambda_opt = 0.0;
  bool reducible = false;  // a positive lambda lowers the variance only when cov < 0
};

/// Sample covariance / variance (n - 1 denominators) and lambda_opt = -cov / var_reg.
RegularizerAnalysis regularizer_analysis(std::span<const double> est_samples, std::span<const double> reg_samples);

/// Exact first and second moments of the general form under Bernoulli(p_true) observation.
struct GeneralFormMoments {
  double mean_est = 0.0;
  double var_est = 0.0;
  double mean_reg = 0.0;
  double var_reg = 0.0;
  double cov = 0.0;
};

template <typename Scalar>
GeneralFormMoments general_form_moments(const GeneralEstimatorForm& form, const LabeledMatrix<Scalar>& e,
                                        const LabeledMatrix<Scalar>& e_hat, const LabeledMatrix<Scalar>& p_true,
                                        const LabeledMatrix<Scalar>& p_hat) {
  form.validate();
  detail::require_same_shape(e, e_hat, "general_form_moments");
  detail::require_same_shape(e, p_true, "general_form_moments");
  detail::require_same_shape(e, p_hat, "general_form_moments");
  const double d = static_cast<double>(e.size());
  KahanSum<double> mean_est, var_est, mean_reg, var_reg, cov;
  for (Eigen::Index r = 0; r < e.rows(); ++r) {
    for (Eigen::Index c = 0; c < e.cols(); ++c) {
      const double p = static_cast<double>(p_true(r, c));
      const double ph = static_cast<double>(p_hat(r, c));
      const double ev = static_cast<double>(e(r, c));
      const double eh = static_cast<double>(e_hat(r, c));
      const double a1 = form.f_coeff(1, ph) * ev + form.g_coeff(1, ph) * eh;
      const double a0 = form.f_coeff(0, ph) * ev + form.g_coeff(0, ph) * eh;
      const double h1 = form.h_coeff(1, ph);
      const double h0 = form.h_coeff(0, ph);
      const double bern = p * (1.0 - p);
      mean_est.add(p * a1 + (1.0 - p) * a0);
      mean_reg.add(p * h1 + (1.0 - p) * h0);
      var_est.add(bern * (a1 - a0) * (a1 - a0));
      var_reg.add(bern * (h1 - h0) * (h1 - h0));
      cov.add(bern * (a1 - a0) * (h1 - h0));
    }
  }
  return {mean_est.value() / d, var_est.value() / (d * d), mean_reg.value() / d, var_reg.value() / (d * d),
          cov.value() / (d * d)};
}

}  // namespace mnar

#endif  // MNAR_ANALYTICS_HPP_
