#include "doctest.h"

#include <cmath>

#include "mnar/shaping.hpp"
#include "mnar/core.hpp"

using namespace mnar;

namespace {

const ShapingFunction kBuiltins[] = {ShapingFunction::identity(), ShapingFunction::sine(), ShapingFunction::log1p(),
                                     ShapingFunction::tanh()};

}  // namespace

TEST_SUITE("shaping") {
  TEST_CASE("eval_f examples") {
    CHECK(eval_f(ShapingFunction::identity(), 0.5) == 0.5);
    CHECK(eval_f(ShapingFunction::log1p(), 0.5) == doctest::Approx(0.584962500721156).epsilon(1e-12));
    CHECK(eval_f(ShapingFunction::tanh(), 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(eval_f(ShapingFunction::sine(), 0.3) == doctest::Approx(std::sin(0.3) / std::sin(1.0)));
    CHECK_THROWS_AS(eval_f(ShapingFunction::identity(), 0.0), DomainError);
    CHECK_THROWS_AS(eval_f(ShapingFunction::identity(), 1.0001), DomainError);
  }

  TEST_CASE("eval_f_alpha examples") {
    for (const auto& f : kBuiltins) CHECK(eval_f_alpha(f, 0.37, 0.0) == 1.0);
    CHECK(eval_f_alpha(ShapingFunction::identity(), 0.25, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(eval_f_alpha(ShapingFunction::log1p(), 0.5, 1.0) == doctest::Approx(0.584962500721156).epsilon(1e-12));
    CHECK_THROWS_AS(eval_f_alpha(ShapingFunction::identity(), 0.5, 1.5), DomainError);
    CHECK_THROWS_AS(eval_f_alpha(ShapingFunction::identity(), 0.5, -0.1), DomainError);
  }

  TEST_CASE("from_name round trip") {
    for (const auto& f : kBuiltins) CHECK(ShapingFunction::from_name(f.name()).kind() == f.kind());
    CHECK_THROWS(ShapingFunction::from_name("cosine"));
  }

  TEST_CASE("property: built-ins bracketed by identity and one, f(1) = 1") {
    for (const auto& f : kBuiltins) {
      CAPTURE(f.name());
      CHECK(std::abs(eval_f(f, 1.0) - 1.0) <= 1e-12);
      double prev = 0.0;
      for (int k = 1; k <= 10000; ++k) {
        const double p = k / 10000.0;
        const double v = eval_f(f, p);
        REQUIRE(v >= p - 1e-15);
        REQUIRE(v <= 1.0 + 1e-15);
        if (f.kind() != ShapingKind::identity) REQUIRE(v > prev);
        prev = v;
      }
    }
  }

  TEST_CASE("property: f^alpha decreasing in alpha") {
    for (const auto& f : kBuiltins) {
      for (double p : {0.05, 0.3, 0.7, 0.95}) {
        double prev = 2.0;
        for (int k = 0; k <= 100; ++k) {
          const double v = eval_f_alpha(f, p, k / 100.0);
          if (f.kind() == ShapingKind::identity || p < 1.0) REQUIRE(v < prev);
          prev = v;
        }
      }
    }
  }

  TEST_CASE("design principles pass for built-ins with known constants") {
    const double expected[] = {1.0, std::sin(1.0), std::log(2.0), std::tanh(1.0)};
    for (int i = 0; i < 4; ++i) {
      CAPTURE(kBuiltins[i].name());
      const auto report = validate_design_principles(kBuiltins[i]);
      CHECK(report.all());
      CHECK(std::abs(report.estimated_C - expected[i]) <= 1e-3);
      CHECK(kBuiltins[i].same_order_constant() == doctest::Approx(expected[i]).epsilon(1e-15));
    }
  }

  TEST_CASE("custom shapings are validated") {
    // sqrt dominates identity but p / sqrt(p) -> 0, so same order fails.
    const auto sqrt_report = validate_design_principles(ShapingFunction::Fn([](double p) { return std::sqrt(p); }));
    CHECK(sqrt_report.isotonic);
    CHECK(sqrt_report.dominates_identity);
    CHECK_FALSE(sqrt_report.same_order);
    CHECK_THROWS_AS(ShapingFunction::custom("sqrt", [](double p) { return std::sqrt(p); }), ValidationError);
    CHECK_THROWS_AS(ShapingFunction::custom("square", [](double p) { return p * p; }), ValidationError);
    CHECK_THROWS_AS(ShapingFunction::custom("bad", [](double p) { return p < 0.5 ? NAN : p; }), ValidationError);
    const auto twice = ShapingFunction::custom("twice", [](double p) { return 2.0 * p / (1.0 + p); });
    CHECK(twice.same_order_constant() == doctest::Approx(0.5).epsilon(1e-3));
  }

  TEST_CASE("non-finite evaluation names the location") {
    try {
      validate_design_principles(ShapingFunction::Fn([](double p) { return p > 0.5 ? INFINITY : p; }));
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("0.5") != std::string::npos);
    }
  }
}
