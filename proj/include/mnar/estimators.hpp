#ifndef MNAR_ESTIMATORS_HPP_
#define MNAR_ESTIMATORS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "mnar/core.hpp"
#include "mnar/shaping.hpp"

namespace mnar {

enum class EstimatorFamily { real, naive, eib, ips, snips, dr, d_ips, d_dr, d_snips, general };

inline const char* family_name(EstimatorFamily family) {
  switch (family) {
    case EstimatorFamily::real: return "real";
    case EstimatorFamily::naive: return "naive";
    case EstimatorFamily::eib: return "eib";
    case EstimatorFamily::ips: return "ips";
    case EstimatorFamily::snips: return "snips";
    case EstimatorFamily::dr: return "dr";
    case EstimatorFamily::d_ips: return "d_ips";
    case EstimatorFamily::d_dr: return "d_dr";
    case EstimatorFamily::d_snips: return "d_snips";
    case EstimatorFamily::general: return "general";
  }
  return "unknown";
}

inline EstimatorFamily family_from_name(const std::string& name) {
  for (auto f : {EstimatorFamily::real, EstimatorFamily::naive, EstimatorFamily::eib, EstimatorFamily::ips,
                 EstimatorFamily::snips, EstimatorFamily::dr, EstimatorFamily::d_ips, EstimatorFamily::d_dr,
                 EstimatorFamily::d_snips, EstimatorFamily::general}) {
    if (name == family_name(f)) return f;
  }
  throw DomainError("unknown estimator family '" + name + "'");
}

inline bool is_dynamic(EstimatorFamily f) {
  return f == EstimatorFamily::d_ips || f == EstimatorFamily::d_dr || f == EstimatorFamily::d_snips;
}

/// Which normalizer D-SNIPS divides by: sum o/f^alpha(p_hat) (default) or sum o/p_hat.
enum class SnipsNormalizer { shaped, propensity };

/// Full description of one estimator. Shaping and alpha are only read by the
/// dynamic families, general_form only by the general family.
template <typename Scalar>
struct EstimatorSpec {
  EstimatorFamily family = EstimatorFamily::naive;
  ErrorSpec error_spec{};
  std::optional<ShapingFunction> shaping;
  std::optional<LabeledMatrix<Scalar>> alpha;
  std::optional<GeneralEstimatorForm> general_form;
  SnipsNormalizer snips_normalizer = SnipsNormalizer::shaped;
  // When set, the naive estimator divides by this count instead of the realized |O|.
  std::optional<double> naive_normalizer;
};

using EstimatorSpecd = EstimatorSpec<double>;

struct GeneralEstimate {
  double est_value = 0.0;
  double reg_value = 0.0;
  double total = 0.0;
};

namespace detail {

template <typename Scalar, typename CellFn>
Scalar mean_over_cells(Eigen::Index rows, Eigen::Index cols, CellFn&& cell) {
  KahanSum<Scalar> acc;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) acc.add(cell(r, c));
  return acc.value() / static_cast<Scalar>(rows * cols);
}

inline void require_propensity(Role role, const char* what) {
  if (role != Role::propensity) throw DomainError(std::string(what) + ": p_hat must carry the propensity role");
}

}  // namespace detail

/// 1/|D| sum e.
template <typename Scalar>
Scalar eval_real(const LabeledMatrix<Scalar>& e) {
  return detail::mean_over_cells<Scalar>(e.rows(), e.cols(), [&](auto r, auto c) { return e(r, c); });
}

/// 1/|O| sum o e. Throws EmptyObservationError when nothing is observed.
template <typename Scalar>
Scalar eval_naive(const LabeledMatrix<Scalar>& e, const ObservationMask& mask,
                  std::optional<double> fixed_normalizer = std::nullopt) {
  detail::require_same_shape(e, mask, "eval_naive");
  const double count = fixed_normalizer ? *fixed_normalizer : static_cast<double>(mask.observed_count());
  if (!(count > 0.0)) throw EmptyObservationError("eval_naive: no observed cells");
  KahanSum<Scalar> acc;
  for (Eigen::Index r = 0; r < e.rows(); ++r)
    for (Eigen::Index c = 0; c < e.cols(); ++c)
      if (mask.observed(r, c)) acc.add(e(r, c));
  return acc.value() / static_cast<Scalar>(count);
}

/// 1/|D| sum [o e + (1 - o) e_hat].
template <typename Scalar>
Scalar eval_eib(const LabeledMatrix<Scalar>& e, const LabeledMatrix<Scalar>& e_hat, const ObservationMask& mask) {
  detail::require_same_shape(e, e_hat, "eval_eib");
  detail::require_same_shape(e, mask, "eval_eib");
  return detail::mean_over_cells<Scalar>(e.rows(), e.cols(), [&](auto r, auto c) {
    return mask.observed(r, c) ? e(r, c) : e_hat(r, c);
  });
}

/// 1/|D| sum (o / p_hat) e.
template <typename Scalar>
Scalar eval_ips(const LabeledMatrix<Scalar>& e, const LabeledMatrix<Scalar>& p_hat, const ObservationMask& mask) {
  detail::require_same_shape(e, p_hat, "eval_ips");
  detail::require_same_shape(e, mask, "eval_ips");
  detail::require_propensity(p_hat.role(), "eval_ips");
  return detail::mean_over_cells<Scalar>(e.rows(), e.cols(), [&](auto r, auto c) {
    return mask.observed(r, c) ? e(r, c) / p_hat(r, c) : Scalar(0);
  });
}

/// 1/|D| sum [e_hat + (o / p_hat)(e - e_hat)].
template <typename Scalar>
Scalar eval_dr(const LabeledMatrix<Scalar>& e, const LabeledMatrix<Scalar>& e_hat, const LabeledMatrix<Scalar>& p_hat,
               const ObservationMask& mask) {
  detail::require_same_shape(e, e_hat, "eval_dr");
  detail::require_same_shape(e, p_hat, "eval_dr");
  detail::require_same_shape(e, mask, "eval_dr");
  detail::require_propensity(p_hat.role(), "eval_dr");
  return detail::mean_over_cells<Scalar>(e.rows(), e.cols(), [&](auto r, auto c) {
    const Scalar correction = mask.observed(r, c) ? (e(r, c) - e_hat(r, c)) / p_hat(r, c) : Scalar(0);
    return e_hat(r, c) + correction;
  });
}

namespace detail {

template <typename Scalar, typename WeightFn>
Scalar self_normalized(const LabeledMatrix<Scalar>& e, const ObservationMask& mask, WeightFn&& weight,
                       const char* what) {
  KahanSum<Scalar> num;
  KahanSum<Scalar> den;
  for (Eigen::Index r = 0; r < e.rows(); ++r) {
    for (Eigen::Index c = 0; c < e.cols(); ++c) {
      if (!mask.observed(r, c)) continue;
      const Scalar w = weight(r, c);
      num.add(w * e(r, c));
      den.add(w);
    }
  }
  if (!(den.value() > Scalar(0))) throw EmptyObservationError(std::string(what) + ": zero normalizer");
  return num.value() / den.value();
}

}  // namespace detail

/// [sum (o / p_hat) e] / [sum o / p_hat].
template <typename Scalar>
Scalar eval_snips(const LabeledMatrix<Scalar>& e, const LabeledMatrix<Scalar>& p_hat, const ObservationMask& mask) {
  detail::require_same_shape(e, p_hat, "eval_snips");
  detail::require_same_shape(e, mask, "eval_snips");
  detail::require_propensity(p_hat.role(), "eval_snips");
  return detail::self_normalized(
      e, mask, [&](auto r, auto c) { return Scalar(1) / p_hat(r, c); }, "eval_snips");
}

/// Per-cell weight 1 / f(p_hat)^alpha of the dynamic estimators.
template <typename Scalar>
Scalar dynamic_weight(const ShapingFunction& shaping, Scalar p_hat, Scalar alpha) {
  return Scalar(1) / static_cast<Scalar>(eval_f_alpha(shaping, static_cast<double>(p_hat), static_cast<double>(alpha)));
}

/**
 * Dynamic estimators with per-cell exponent alpha:
 *   d_ips    1/|D| sum (o / f^alpha(p_hat)) e
 *   d_dr     1/|D| sum [e_hat + (o / f^alpha(p_hat)) (e - e_hat)]
 *   d_snips  d_ips weights, self-normalized
 * With the identity shaping, alpha = 1 recovers IPS / DR and alpha = 0 recovers
 * (|O|/|D|) naive / EIB.
 */
template <typename Scalar>
Scalar eval_dynamic(EstimatorFamily family, const LabeledMatrix<Scalar>& e, const LabeledMatrix<Scalar>& e_hat,
                    const LabeledMatrix<Scalar>& p_hat, const ObservationMask& mask, const ShapingFunction& shaping,
                    const LabeledMatrix<Scalar>& alpha, SnipsNormalizer normalizer = SnipsNormalizer::shaped) {
  detail::require_same_shape(e, e_hat, "eval_dynamic");
  detail::require_same_shape(e, p_hat, "eval_dynamic");
  detail::require_same_shape(e, alpha, "eval_dynamic");
  detail::require_same_shape(e, mask, "eval_dynamic");
  detail::require_propensity(p_hat.role(), "eval_dynamic");
  if (alpha.role() != Role::exponent) throw DomainError("eval_dynamic: alpha must carry the exponent role");

  switch (family) {
    case EstimatorFamily::d_ips:
      return detail::mean_over_cells<Scalar>(e.rows(), e.cols(), [&](auto r, auto c) {
        return mask.observed(r, c) ? dynamic_weight(shaping, p_hat(r, c), alpha(r, c)) * e(r, c) : Scalar(0);
      });
    case EstimatorFamily::d_dr:
      return detail::mean_over_cells<Scalar>(e.rows(), e.cols(), [&](auto r, auto c) {
        const Scalar correction =
            mask.observed(r, c) ? dynamic_weight(shaping, p_hat(r, c), alpha(r, c)) * (e(r, c) - e_hat(r, c))
                                : Scalar(0);
        return e_hat(r, c) + correction;
      });
    case EstimatorFamily::d_snips: {
      if (normalizer == SnipsNormalizer::shaped) {
        return detail::self_normalized(
            e, mask, [&](auto r, auto c) { return dynamic_weight(shaping, p_hat(r, c), alpha(r, c)); },
            "eval_dynamic(d_snips)");
      }
      KahanSum<Scalar> num;
      KahanSum<Scalar> den;
      for (Eigen::Index r = 0; r < e.rows(); ++r) {
        for (Eigen::Index c = 0; c < e.cols(); ++c) {
          if (!mask.observed(r, c)) continue;
          num.add(dynamic_weight(shaping, p_hat(r, c), alpha(r, c)) * e(r, c));
          den.add(Scalar(1) / p_hat(r, c));
        }
      }
      if (!(den.value() > Scalar(0))) throw EmptyObservationError("eval_dynamic(d_snips): zero normalizer");
      return num.value() / den.value();
    }
    default:
      throw DomainError(std::string("eval_dynamic: not a dynamic family: ") + family_name(family));
  }
}

/// General form: estimator part, regularizer part and their weighted total.
template <typename Scalar>
GeneralEstimate eval_general(const GeneralEstimatorForm& form, const LabeledMatrix<Scalar>& e,
                             const LabeledMatrix<Scalar>& e_hat, const LabeledMatrix<Scalar>& p_hat,
                             const ObservationMask& mask) {
  form.validate();
  detail::require_same_shape(e, e_hat, "eval_general");
  detail::require_same_shape(e, p_hat, "eval_general");
  detail::require_same_shape(e, mask, "eval_general");
  detail::require_propensity(p_hat.role(), "eval_general");
  KahanSum<double> est;
  KahanSum<double> reg;
  for (Eigen::Index r = 0; r < e.rows(); ++r) {
    for (Eigen::Index c = 0; c < e.cols(); ++c) {
      const int o = mask(r, c);
      const double p = static_cast<double>(p_hat(r, c));
      const double f = form.f_coeff(o, p);
      const double g = form.g_coeff(o, p);
      const double h = form.h_coeff(o, p);
      if (!std::isfinite(f) || !std::isfinite(g) || !std::isfinite(h)) {
        throw EvaluationError("eval_general: non-finite coefficient at (" + std::to_string(r) + ", " +
                              std::to_string(c) + ")");
      }
      est.add(f * static_cast<double>(e(r, c)) + g * static_cast<double>(e_hat(r, c)));
      reg.add(h);
    }
  }
  const double n = static_cast<double>(e.size());
  GeneralEstimate out;
  out.est_value = est.value() / n;
  out.reg_value = reg.value() / n;
  out.total = out.est_value + form.reg_weight * out.reg_value;
  return out;
}

/// Dispatch on spec.family. For the general family the weighted total is returned.
template <typename Scalar>
Scalar evaluate(const EstimatorSpec<Scalar>& spec, const LabeledMatrix<Scalar>& e, const LabeledMatrix<Scalar>& e_hat,
                const LabeledMatrix<Scalar>& p_hat, const ObservationMask& mask) {
  switch (spec.family) {
    case EstimatorFamily::real: return eval_real(e);
    case EstimatorFamily::naive: return eval_naive(e, mask, spec.naive_normalizer);
    case EstimatorFamily::eib: return eval_eib(e, e_hat, mask);
    case EstimatorFamily::ips: return eval_ips(e, p_hat, mask);
    case EstimatorFamily::snips: return eval_snips(e, p_hat, mask);
    case EstimatorFamily::dr: return eval_dr(e, e_hat, p_hat, mask);
    case EstimatorFamily::d_ips:
    case EstimatorFamily::d_dr:
    case EstimatorFamily::d_snips:
      if (!spec.shaping || !spec.alpha) throw DomainError("dynamic estimator requires shaping and alpha");
      return eval_dynamic(spec.family, e, e_hat, p_hat, mask, *spec.shaping, *spec.alpha, spec.snips_normalizer);
    case EstimatorFamily::general:
      if (!spec.general_form) throw DomainError("general estimator requires a general_form");
      return static_cast<Scalar>(eval_general(*spec.general_form, e, e_hat, p_hat, mask).total);
  }
  throw DomainError("unknown estimator family");
}

}  // namespace mnar

#endif  // MNAR_ESTIMATORS_HPP_
