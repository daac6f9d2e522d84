#include "doctest.h"

#include <cmath>
#include <vector>

#include "mnar/analytics.hpp"
#include "support/generators.hpp"

using namespace mnar;

namespace {

AnalyticInputs<double> inputs(const LabeledMatrixd& e, const LabeledMatrixd& e_hat, const LabeledMatrixd& p_true,
                              const LabeledMatrixd& p_hat) {
  return AnalyticInputs<double>{e, e_hat, p_true, p_hat, std::nullopt, std::nullopt, std::nullopt};
}

LabeledMatrixd row(std::vector<double> v, Role role = Role::generic) { return LabeledMatrixd::from_rows({v}, role); }

const ShapingFunction kBuiltins[] = {ShapingFunction::identity(), ShapingFunction::sine(), ShapingFunction::log1p(),
                                     ShapingFunction::tanh()};

}  // namespace

TEST_SUITE("analytics") {
  TEST_CASE("h_B examples") {
    const auto id = ShapingFunction::identity();
    CHECK(h_B(id, 0.25, 0.25, 1.0) == 0.0);
    CHECK(h_B(id, 0.25, 0.25, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
    for (const auto& f : kBuiltins) CHECK(h_B(f, 0.3, 0.7, 0.0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK_THROWS_AS(h_B(id, 0.25, 1.5, 0.5), DomainError);
  }

  TEST_CASE("h_V examples") {
    const auto id = ShapingFunction::identity();
    CHECK(h_V(id, 0.5, 0.0, 0.3) == 0.0);
    CHECK(h_V(id, 0.5, 1.0, 0.3) == 0.0);
    CHECK(h_V(id, 0.25, 0.25, 1.0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(h_V(id, 0.25, 0.25, 0.0) == doctest::Approx(0.1875).epsilon(1e-15));
  }

  TEST_CASE("closed form bias examples") {
    gen::Rng rng(2);
    const auto in = gen::instance(rng);
    CHECK(closed_form_bias(EstimatorFamily::ips, inputs(in.e, in.e_hat, in.p_true, in.p_true)) <= 1e-15);

    const auto half = row({0.5, 0.5}, Role::propensity);
    CHECK(closed_form_bias(EstimatorFamily::eib, inputs(row({1.0, 0.0}), row({0.0, 1.0}), half, half)) == 0.0);

    const auto q = row({0.25, 0.25}, Role::propensity);
    auto ai = inputs(row({1.0, 1.0}), row({0.0, 0.0}), q, q);
    ai.shaping = ShapingFunction::identity();
    ai.alpha = gen::constant_alpha(q, 0.5);
    CHECK(closed_form_bias(EstimatorFamily::d_ips, ai) == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("closed form variance examples") {
    const auto half = row({0.5, 0.5}, Role::propensity);
    CHECK(closed_form_variance(EstimatorFamily::ips, inputs(row({1.0, 2.0}), row({0.0, 0.0}), half, half)) ==
          doctest::Approx(1.25).epsilon(1e-15));

    gen::Rng rng(6);
    const auto e = gen::matrix(rng, 3, 4, 0.0, 2.0);
    const auto eh = gen::matrix(rng, 3, 4, 0.0, 2.0);
    const auto ones = LabeledMatrixd::constant(3, 4, 1.0, Role::propensity);
    auto ai = inputs(e, eh, ones, ones);
    ai.shaping = ShapingFunction::log1p();
    ai.alpha = gen::constant_alpha(e, 0.4);
    ai.mask_size = 12.0;
    for (auto f : {EstimatorFamily::naive, EstimatorFamily::eib, EstimatorFamily::ips, EstimatorFamily::dr,
                   EstimatorFamily::d_ips, EstimatorFamily::d_dr})
      CHECK(closed_form_variance(f, ai) == 0.0);

    const auto p = gen::matrix(rng, 3, 4, 0.1, 0.9, Role::propensity);
    auto zero = inputs(LabeledMatrixd::constant(3, 4, 0.0), eh, p, p);
    zero.shaping = ShapingFunction::sine();
    zero.alpha = gen::constant_alpha(p, 0.7);
    zero.mask_size = 5.0;
    for (auto f : {EstimatorFamily::ips, EstimatorFamily::naive, EstimatorFamily::d_ips})
      CHECK(closed_form_variance(f, zero) == 0.0);
  }

  TEST_CASE("closed forms reject unsupported families and missing inputs") {
    const auto half = row({0.5, 0.5}, Role::propensity);
    const auto ai = inputs(row({1.0, 2.0}), row({0.0, 0.0}), half, half);
    CHECK_THROWS_AS(closed_form_variance(EstimatorFamily::snips, ai), DomainError);
    CHECK_THROWS_AS(closed_form_variance(EstimatorFamily::d_ips, ai), DomainError);
    CHECK_THROWS_AS(closed_form_variance(EstimatorFamily::naive, ai), EmptyObservationError);
    CHECK(closed_form_variance(EstimatorFamily::real, ai) == 0.0);
  }

  TEST_CASE("naive bias conventions") {
    const auto p = row({0.2, 0.6}, Role::propensity);
    auto ai = inputs(row({1.0, 3.0}), row({0.0, 0.0}), p, p);
    ai.mask_size = 1.0;
    // exact: 1/2 |(1 - 2*0.2)*1 + (1 - 2*0.6)*3| = 1/2 |0.6 - 0.6| = 0
    CHECK(closed_form_bias(EstimatorFamily::naive, ai) == doctest::Approx(0.0).epsilon(1e-15));
    // compat: 1/1 |(0.8)*1 + (0.4)*3| = 2.0
    CHECK(closed_form_bias(EstimatorFamily::naive, ai, NaiveBiasConvention::compat) ==
          doctest::Approx(2.0).epsilon(1e-15));
  }

  TEST_CASE("tail bound examples") {
    const auto p = row({0.4, 0.8}, Role::propensity);
    const auto a0 = gen::constant_alpha(p, 0.0);
    CHECK(tail_bound(EstimatorFamily::d_ips, row({0.0, 0.0}), p, ShapingFunction::log1p(), a0, 0.05) == 0.0);
    const double b = tail_bound(EstimatorFamily::d_ips, row({1.0, 2.0}), p, ShapingFunction::log1p(), a0, 0.05);
    CHECK(b == doctest::Approx(std::sqrt(std::log(40.0) * 5.0 / 8.0)).epsilon(1e-14));
    CHECK(b == doctest::Approx(1.51841).epsilon(1e-5));
    double prev = INFINITY;
    for (double rho : {0.01, 0.1, 0.5, 0.9, 0.999}) {
      const double v = tail_bound(EstimatorFamily::d_dr, row({1.0, 2.0}), p, ShapingFunction::log1p(), a0, rho);
      CHECK(v < prev);
      prev = v;
    }
    CHECK(prev > std::sqrt(std::log(2.0) * 5.0 / 8.0));
    const double lin = tail_bound(EstimatorFamily::d_dr, row({1.0, 2.0}), p, ShapingFunction::log1p(), a0, 0.05,
                                  TailDenominator::linear);
    CHECK(lin == doctest::Approx(b * std::sqrt(2.0)).epsilon(1e-14));
    CHECK_THROWS_AS(tail_bound(EstimatorFamily::ips, row({1.0, 2.0}), p, ShapingFunction::log1p(), a0, 0.05),
                    DomainError);
    CHECK_THROWS_AS(tail_bound(EstimatorFamily::d_ips, row({1.0, 2.0}), p, ShapingFunction::log1p(), a0, 1.0),
                    DomainError);
  }

  TEST_CASE("generalization bound examples") {
    gen::Rng rng(8);
    const Eigen::Index r = 10, c = 10;
    const auto p = gen::matrix(rng, r, c, 0.1, 0.9, Role::propensity);
    const auto z_minus = gen::matrix(rng, r, c, 0.0, 1.0);
    const auto z_plus = gen::matrix(rng, r, c, 0.0, 2.0);
    const auto shaping = ShapingFunction::identity();
    const auto alpha = gen::constant_alpha(p, 1.0);

    const auto one = generalization_bound(EstimatorFamily::d_ips, 0.3, z_minus, z_plus, p, p, shaping, alpha, 0.05, 1);
    CHECK(one.variance_term == doctest::Approx(
                                   tail_bound(EstimatorFamily::d_ips, z_plus, p, shaping, alpha, 0.05)).epsilon(1e-15));
    CHECK(one.bias_term == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(one.generalization_bound == doctest::Approx(0.3 + one.bias_term + one.variance_term).epsilon(1e-15));

    const auto two = generalization_bound(EstimatorFamily::d_ips, 0.3, z_minus, z_plus, p, p, shaping, alpha, 0.05, 2);
    CHECK(two.variance_term / one.variance_term ==
          doctest::Approx(std::sqrt(std::log(4.0 / 0.05) / std::log(2.0 / 0.05))).epsilon(1e-12));

    const auto half = gen::constant_alpha(p, 0.5);
    const auto biased = generalization_bound(EstimatorFamily::d_dr, 0.3, z_minus, z_plus, p, p, shaping, half, 0.05, 3);
    double ref = 0.0;
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) ref += std::abs((1.0 - std::sqrt(p(i, j))) * z_minus(i, j));
    CHECK(biased.bias_term == doctest::Approx(ref / 100.0).epsilon(1e-12));
    CHECK_THROWS_AS(
        generalization_bound(EstimatorFamily::d_ips, 0.3, z_minus, z_plus, p, p, shaping, alpha, 0.05, 0),
        DomainError);
  }

  TEST_CASE("regularizer analysis examples") {
    const std::vector<double> flat{1.0, 2.0, 3.0};
    const std::vector<double> reg{0.5, -0.5, 0.5};
    // cov of (1,2,3) with (0.5,-0.5,0.5) is 0
    auto zero = regularizer_analysis(flat, reg);
    CHECK(zero.cov == doctest::Approx(0.0));
    CHECK(zero.lambda_opt == doctest::Approx(0.0));
    CHECK_FALSE(zero.reducible);

    const std::vector<double> est3{1.0, 0.0, -1.0};
    const std::vector<double> reg3{-0.5, 0.0, 0.5};
    const auto neg = regularizer_analysis(est3, reg3);
    CHECK(neg.cov == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(neg.var_reg == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(neg.lambda_opt == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(neg.reducible);

    const std::vector<double> est2{-2.0, 0.0};
    const std::vector<double> reg2{0.5, -0.5};
    const auto two = regularizer_analysis(est2, reg2);
    CHECK(std::abs(two.cov - -1.0) <= 1e-12);
    CHECK(std::abs(two.var_reg - 0.5) <= 1e-12);
    CHECK(std::abs(two.lambda_opt - 2.0) <= 1e-12);

    const std::vector<double> up{1.0, 2.0, 4.0};
    CHECK_FALSE(regularizer_analysis(up, up).reducible);

    const std::vector<double> constant{1.0, 1.0, 1.0};
    const auto c = regularizer_analysis(up, constant);
    CHECK(c.lambda_opt == 0.0);

    const std::vector<double> single{1.0};
    CHECK_THROWS_AS(regularizer_analysis(single, single), DomainError);
    CHECK_THROWS_AS(regularizer_analysis(up, single), DimensionError);
  }

  TEST_CASE("property: report factors and nonnegativity") {
    gen::Rng rng(12);
    for (int t = 0; t < 100; ++t) {
      const auto in = gen::instance(rng, {6, 6, 0.05, 0.95, false});
      auto ai = inputs(in.e, in.e_hat, in.p_true, in.p_hat);
      ai.shaping = ShapingFunction::from_name(t % 2 ? "tanh" : "identity");
      ai.alpha = gen::matrix(rng, in.e.rows(), in.e.cols(), 0.0, 1.0, Role::exponent);
      ai.mask_size = std::max(1.0, std::round(in.p_true.values().sum()));
      for (auto f : {EstimatorFamily::naive, EstimatorFamily::eib, EstimatorFamily::ips, EstimatorFamily::dr,
                     EstimatorFamily::d_ips, EstimatorFamily::d_dr}) {
        const auto rep = bias_variance_report(f, ai);
        CHECK(rep.bias >= 0.0);
        CHECK(rep.variance >= 0.0);
        CHECK(rep.estimator == f);
        if (f == EstimatorFamily::ips || f == EstimatorFamily::dr) {
          const double p = in.p_true(0, 0), ph = in.p_hat(0, 0);
          CHECK(rep.per_cell_bias_factor(0, 0) == doctest::Approx(1.0 - p / ph));
          CHECK(rep.per_cell_variance_factor(0, 0) == doctest::Approx(p * (1.0 - p) / (ph * ph)));
        }
      }
    }
  }

  TEST_CASE("property: h_B decreasing and h_V increasing in alpha") {
    for (const auto& f : kBuiltins) {
      for (int k = 1; k <= 9; ++k) {
        const double p = k / 10.0;
        double prev_b = INFINITY, prev_v = -INFINITY;
        for (int j = 0; j < 100; ++j) {
          const double a = j / 99.0;
          const double b = h_B(f, p, p, a), v = h_V(f, p, p, a);
          REQUIRE(b < prev_b);
          REQUIRE(v > prev_v);
          prev_b = b;
          prev_v = v;
        }
      }
    }
  }

  TEST_CASE("property: ips variance grows tenfold per decade") {
    double prev = 0.0;
    for (int k = 2; k <= 6; ++k) {
      const auto p = LabeledMatrixd::constant(1, 1, std::pow(10.0, -k), Role::propensity);
      const auto e = LabeledMatrixd::constant(1, 1, 1.0);
      const double v = closed_form_variance(EstimatorFamily::ips, inputs(e, e, p, p));
      if (k > 2) CHECK(std::abs(v / prev - 10.0) <= 0.5);
      prev = v;
    }
  }

  TEST_CASE("general form moments match the ips closed form") {
    gen::Rng rng(15);
    const auto in = gen::instance(rng, {5, 5, 0.1, 0.9, false});
    GeneralEstimatorForm ips;
    ips.f_coeff = [](int o, double p) { return o / p; };
    const auto m = general_form_moments(ips, in.e, in.e_hat, in.p_true, in.p_hat);
    const auto ai = inputs(in.e, in.e_hat, in.p_true, in.p_hat);
    CHECK(m.mean_est == doctest::Approx(closed_form_mean(EstimatorFamily::ips, ai)).epsilon(1e-13));
    CHECK(m.var_est == doctest::Approx(closed_form_variance(EstimatorFamily::ips, ai)).epsilon(1e-13));
    CHECK(m.var_reg == 0.0);
    CHECK(m.cov == 0.0);
  }

  TEST_CASE("control-variate regularizer can reduce variance") {
    // h = p_hat - o is zero-mean at p_hat = p and anti-correlated with o/p_hat e.
    gen::Rng rng(19);
    const auto in = gen::instance(rng, {4, 4, 0.1, 0.9, true});
    GeneralEstimatorForm f;
    f.f_coeff = [](int o, double p) { return o / p; };
    f.h_coeff = [](int o, double p) { return p - o; };
    const auto m = general_form_moments(f, in.e, in.e_hat, in.p_true, in.p_hat);
    CHECK(m.mean_reg == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(m.cov < 0.0);
    const double lambda = -m.cov / m.var_reg;
    CHECK(m.var_est + 2 * lambda * m.cov + lambda * lambda * m.var_reg < m.var_est);
  }
}
