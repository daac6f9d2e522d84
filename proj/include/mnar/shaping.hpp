#ifndef MNAR_SHAPING_HPP_
#define MNAR_SHAPING_HPP_

#include <functional>
#include <optional>
#include <string>

namespace mnar {

enum class ShapingKind { identity, sine, log1p, tanh, custom };

/**
 * Propensity shaping function f used by the dynamic estimators, which weight an
 * observed cell by 1 / f(p_hat)^alpha instead of 1 / p_hat.
 *
 * Built-in members are normalised so that f(1) = 1:
 *   identity  f(p) = p
 *   sine      f(p) = sin(p) / sin(1)
 *   log1p     f(p) = log(1 + p) / log(2)
 *   tanh      f(p) = tanh(p) / tanh(1)
 *
 * All of them are increasing on (0, 1], dominate the identity, vanish at 0+ and
 * behave like p / C near zero for a positive constant C.
 */
class ShapingFunction {
 public:
  using Fn = std::function<double(double)>;

  static ShapingFunction identity();
  static ShapingFunction sine();
  static ShapingFunction log1p();
  static ShapingFunction tanh();
  /// Accepted only when validate_design_principles() passes; throws ValidationError otherwise.
  static ShapingFunction custom(std::string name, Fn fn);
  /// "identity", "sine", "log1p" or "tanh".
  static ShapingFunction from_name(const std::string& name);

  ShapingKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  /// lim p / f(p) as p -> 0+. Exact for built-ins, the extrapolated estimate for custom kinds.
  double same_order_constant() const { return same_order_constant_; }

  /// f(p) without domain checks; use eval_f for checked evaluation.
  double raw(double p) const;

 private:
  ShapingFunction(ShapingKind kind, std::string name, Fn fn, double c)
      : kind_(kind), name_(std::move(name)), fn_(std::move(fn)), same_order_constant_(c) {}

  ShapingKind kind_;
  std::string name_;
  Fn fn_;
  double same_order_constant_;
};

/// f(p_hat); p_hat must lie in (0, 1].
double eval_f(const ShapingFunction& fn, double p_hat);

/// f(p_hat)^alpha with alpha in [0, 1]. alpha = 0 gives exactly 1.
double eval_f_alpha(const ShapingFunction& fn, double p_hat, double alpha);

struct DesignPrincipleReport {
  bool isotonic = false;
  bool boundary = false;
  bool dominates_identity = false;
  bool same_order = false;
  double estimated_C = 0.0;
  std::optional<std::string> failure;  // first failing location, if any

  bool all() const { return isotonic && boundary && dominates_identity && same_order; }
};

/// Grid check of monotonicity, f(0+) -> 0, f(1) = 1, f >= identity and the same-order limit.
/// Non-finite evaluations throw ValidationError naming the offending point.
DesignPrincipleReport validate_design_principles(const ShapingFunction& fn);

/// Same, for a bare callable (used before a custom ShapingFunction exists).
DesignPrincipleReport validate_design_principles(const ShapingFunction::Fn& fn);

}  // namespace mnar

#endif  // MNAR_SHAPING_HPP_
