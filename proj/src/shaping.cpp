#include "mnar/shaping.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "mnar/core.hpp"

namespace mnar {
namespace {

constexpr int kGridPoints = 10000;
constexpr double kBoundaryProbe = 1e-12;
constexpr double kBoundaryTolerance = 1e-9;
constexpr double kUnitTolerance = 1e-12;
constexpr double kSameOrderTolerance = 1e-3;

std::string at(double p) {
  std::ostringstream os;
  os.precision(17);
  os << "p = " << p;
  return os.str();
}

double checked(const ShapingFunction::Fn& fn, double p) {
  const double v = fn(p);
  if (!std::isfinite(v)) throw ValidationError("shaping function not finite at " + at(p));
  return v;
}

}  // namespace

ShapingFunction ShapingFunction::identity() {
  return ShapingFunction(ShapingKind::identity, "identity", [](double p) { return p; }, 1.0);
}

ShapingFunction ShapingFunction::sine() {
  static const double s1 = std::sin(1.0);
  return ShapingFunction(ShapingKind::sine, "sine", [](double p) { return std::sin(p) / s1; }, s1);
}

ShapingFunction ShapingFunction::log1p() {
  static const double l2 = std::log(2.0);
  return ShapingFunction(ShapingKind::log1p, "log1p", [](double p) { return std::log1p(p) / l2; }, l2);
}

ShapingFunction ShapingFunction::tanh() {
  static const double t1 = std::tanh(1.0);
  return ShapingFunction(ShapingKind::tanh, "tanh", [](double p) { return std::tanh(p) / t1; }, t1);
}

ShapingFunction ShapingFunction::custom(std::string name, Fn fn) {
  if (!fn) throw ValidationError("custom shaping function is empty");
  const DesignPrincipleReport report = validate_design_principles(fn);
  if (!report.all()) {
    throw ValidationError("custom shaping function '" + name +
                          "' violates the design principles: " + report.failure.value_or("unknown"));
  }
  return ShapingFunction(ShapingKind::custom, std::move(name), std::move(fn), report.estimated_C);
}

ShapingFunction ShapingFunction::from_name(const std::string& name) {
  if (name == "identity") return identity();
  if (name == "sine") return sine();
  if (name == "log1p") return log1p();
  if (name == "tanh") return tanh();
  throw DomainError("unknown shaping kind '" + name + "'");
}

double ShapingFunction::raw(double p) const { return fn_(p); }

double eval_f(const ShapingFunction& fn, double p_hat) {
  if (!(p_hat > 0.0 && p_hat <= 1.0)) throw DomainError("eval_f: p_hat outside (0,1]: " + at(p_hat));
  return fn.raw(p_hat);
}

double eval_f_alpha(const ShapingFunction& fn, double p_hat, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("eval_f_alpha: alpha outside [0,1]");
  const double f = eval_f(fn, p_hat);
  if (alpha == 0.0) return 1.0;
  if (alpha == 1.0) return f;
  return std::pow(f, alpha);
}

DesignPrincipleReport validate_design_principles(const ShapingFunction& fn) {
  return validate_design_principles([&fn](double p) { return fn.raw(p); });
}

DesignPrincipleReport validate_design_principles(const ShapingFunction::Fn& fn) {
  DesignPrincipleReport report;
  auto fail = [&report](std::string what) {
    if (!report.failure) report.failure = std::move(what);
  };

  report.isotonic = true;
  report.dominates_identity = true;
  double prev = checked(fn, 1.0 / kGridPoints);
  for (int k = 1; k <= kGridPoints; ++k) {
    const double p = static_cast<double>(k) / kGridPoints;
    const double v = checked(fn, p);
    if (k > 1 && !(v > prev)) {
      if (report.isotonic) fail("not increasing at " + at(p));
      report.isotonic = false;
    }
    // identity attains equality; allow one ulp-scale slack
    if (v < p * (1.0 - 4 * std::numeric_limits<double>::epsilon())) {
      if (report.dominates_identity) fail("f(p) < p at " + at(p));
      report.dominates_identity = false;
    }
    prev = v;
  }

  const double at_zero = checked(fn, kBoundaryProbe);
  const double at_one = checked(fn, 1.0);
  report.boundary = std::abs(at_zero) <= kBoundaryTolerance && std::abs(at_one - 1.0) <= kUnitTolerance;
  if (!report.boundary) fail("boundary: f(0+) = " + std::to_string(at_zero) + ", f(1) = " + std::to_string(at_one));

  // p / f(p) at three shrinking points; the limit is accepted when successive
  // ratios settle and a Richardson step (linear in p) gives the estimate.
  const double h[3] = {1e-3, 1e-5, 1e-7};
  double ratio[3];
  for (int k = 0; k < 3; ++k) ratio[k] = h[k] / checked(fn, h[k]);
  const double change_a = std::abs(ratio[1] - ratio[0]) / std::abs(ratio[1]);
  const double change_b = std::abs(ratio[2] - ratio[1]) / std::abs(ratio[2]);
  const double extrapolated = ratio[2] + (ratio[2] - ratio[1]) * h[2] / (h[1] - h[2]);
  report.estimated_C = extrapolated;
  report.same_order = std::isfinite(extrapolated) && extrapolated > 0.0 && change_a <= kSameOrderTolerance &&
                      change_b <= kSameOrderTolerance && change_b <= change_a + kSameOrderTolerance * 1e-3;
  if (!report.same_order) fail("p/f(p) does not settle near 0 (estimate " + std::to_string(extrapolated) + ")");
  return report;
}

}  // namespace mnar
