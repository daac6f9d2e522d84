#include "doctest.h"

#include <cmath>

#include "mnar/simulation.hpp"
#include "support/generators.hpp"

using namespace mnar;

namespace {

double pearson(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y) {
  const Eigen::ArrayXd dx = x - x.mean();
  const Eigen::ArrayXd dy = y - y.mean();
  return (dx * dy).sum() / std::sqrt((dx * dx).sum() * (dy * dy).sum());
}

Eigen::ArrayXd flat(const RowMajorMatrix<double>& m) { return Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size()); }

Eigen::ArrayXd flat(const ObservationMask& m) { return m.bits().cast<double>().reshaped<Eigen::RowMajor>().array(); }

LabeledMatrixd row(std::vector<double> v, Role role = Role::generic) { return LabeledMatrixd::from_rows({v}, role); }

EstimatorSpecd family(EstimatorFamily f) {
  EstimatorSpecd s;
  s.family = f;
  return s;
}

}  // namespace

TEST_SUITE("simulation") {
  TEST_CASE("zero slope gives constant propensity") {
    SyntheticSpec spec;
    spec.rows = 20;
    spec.cols = 30;
    spec.propensity_slope = 0.0;
    const auto data = generate_synthetic(spec);
    CHECK((data.p_true.values().array() == 0.5).all());
  }

  TEST_CASE("generation is deterministic in the seed") {
    SyntheticSpec spec;
    spec.rows = 30;
    spec.cols = 40;
    spec.seed = 99;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    CHECK(a.y_true.values() == b.y_true.values());
    CHECK(a.p_true.values() == b.p_true.values());
    CHECK(a.raw_score.values() == b.raw_score.values());
    spec.seed = 100;
    CHECK(generate_synthetic(spec).raw_score.values() != a.raw_score.values());
  }

  TEST_CASE("positive slope correlates propensity with preference") {
    const auto data = generate_synthetic(SyntheticSpec{});
    CHECK(pearson(flat(data.p_true.values()), flat(data.raw_score.values())) > 0.5);
    CHECK(data.p_true.values().minCoeff() >= 0.02);
    CHECK(data.p_true.values().maxCoeff() <= 1.0);
    CHECK(data.y_true.role() == Role::binary_labels);
  }

  TEST_CASE("rating mode and binarization") {
    SyntheticSpec spec;
    spec.rows = 40;
    spec.cols = 50;
    spec.label_mode = LabelMode::rating_1_to_5;
    const auto data = generate_synthetic(spec);
    CHECK(data.y_true.values().minCoeff() >= 1.0);
    CHECK(data.y_true.values().maxCoeff() <= 5.0);
    CHECK((data.y_true.values().array() == data.y_true.values().array().round()).all());
    const auto bin = binarize(row({1.0, 3.0, 3.5, 4.0, 5.0}));
    CHECK(bin.values() == row({0.0, 0.0, 1.0, 1.0, 1.0}).values());
    CHECK(bin.role() == Role::binary_labels);
  }

  TEST_CASE("spec validation") {
    SyntheticSpec spec;
    spec.latent_rank = 0;
    CHECK_THROWS_AS(generate_synthetic(spec), DomainError);
    spec = SyntheticSpec{};
    spec.rows = 0;
    CHECK_THROWS_AS(generate_synthetic(spec), DomainError);
    spec = SyntheticSpec{};
    spec.propensity_floor = 0.0;
    CHECK_THROWS_AS(generate_synthetic(spec), DomainError);
  }

  TEST_CASE("sample_mask examples") {
    RngStream rng(1, 0);
    CHECK(sample_mask(LabeledMatrixd::constant(5, 5, 1.0, Role::propensity), rng).observed_count() == 25);
    const auto big = sample_mask(LabeledMatrixd::constant(1000, 1000, 0.5, Role::propensity), rng);
    CHECK(std::abs(static_cast<double>(big.observed_count()) / 1e6 - 0.5) <= 0.002);

    const auto half = LabeledMatrixd::constant(100, 100, 0.5, Role::propensity);
    RngStream s1(7, 1), s2(7, 2);
    CHECK(std::abs(pearson(flat(sample_mask(half, s1)), flat(sample_mask(half, s2)))) < 0.01 * 4);
  }

  TEST_CASE("stream independence over many pairs") {
    // |r| < 0.01 is ~1 sigma at 1e4 cells, so check the typical magnitude across pairs.
    const auto half = LabeledMatrixd::constant(100, 100, 0.5, Role::propensity);
    double mean_abs = 0.0;
    for (int k = 0; k < 50; ++k) {
      RngStream s1(3, 2 * k), s2(3, 2 * k + 1);
      mean_abs += std::abs(pearson(flat(sample_mask(half, s1)), flat(sample_mask(half, s2))));
    }
    CHECK(mean_abs / 50 < 0.01);
  }

  TEST_CASE("experiment split is disjoint with fixed test size") {
    const auto data = generate_synthetic(SyntheticSpec{});
    RngStream rng(5, 7);
    const auto split = make_experiment_split(data.p_true, 10, rng);
    for (Eigen::Index r = 0; r < split.test.rows(); ++r) {
      CHECK(split.test.bits().row(r).cast<int>().sum() == 10);
      for (Eigen::Index c = 0; c < split.test.cols(); ++c) REQUIRE(!(split.test(r, c) && split.train(r, c)));
    }
    CHECK(split.train.observed_count() > 0);
  }

  TEST_CASE("monte carlo examples") {
    const auto half = row({0.5, 0.5}, Role::propensity);
    const auto e = row({1.0, 2.0});
    MonteCarloOptions opts;
    opts.replicas = 200000;
    const auto ips = monte_carlo(family(EstimatorFamily::ips), e, e, half, half, opts);
    CHECK(ips.empirical_bias <= 4.0 * ips.standard_error);
    CHECK(std::abs(ips.empirical_variance - 1.25) / 1.25 <= 0.03);
    CHECK(ips.standard_error == doctest::Approx(std::sqrt(ips.empirical_variance / 200000.0)).epsilon(1e-15));
    REQUIRE(ips.closed_form.has_value());
    CHECK(ips.closed_form->variance == doctest::Approx(1.25));

    opts.replicas = 2000;
    gen::Rng rng(61);
    const auto in = gen::instance(rng);
    const auto dr = monte_carlo(family(EstimatorFamily::dr), in.e, in.e, in.p_true, in.p_hat, opts);
    CHECK(dr.empirical_variance <= 1e-28);
  }

  TEST_CASE("monte carlo is independent of thread count") {
    gen::Rng rng(67);
    const auto in = gen::instance(rng);
    MonteCarloOptions opts;
    opts.replicas = 5000;
    opts.seed = 12;
    opts.keep_values = true;
    auto spec = family(EstimatorFamily::snips);
    const auto one = monte_carlo(spec, in.e, in.e_hat, in.p_true, in.p_hat, opts);
    opts.threads = 3;
    const auto three = monte_carlo(spec, in.e, in.e_hat, in.p_true, in.p_hat, opts);
    CHECK(one.values == three.values);
    CHECK(one.empirical_mean == three.empirical_mean);
    CHECK(one.empirical_variance == three.empirical_variance);
    CHECK(one.values.size() == 5000);
  }

  TEST_CASE("empty masks are resampled and counted") {
    const auto p = row({0.3, 0.3}, Role::propensity);
    const auto e = row({1.0, 2.0});
    MonteCarloOptions opts;
    opts.replicas = 1000;
    // P(empty) = 0.49, far above the 1% budget
    CHECK_THROWS_AS(monte_carlo(family(EstimatorFamily::naive), e, e, p, p, opts), DegenerateError);
    auto fixed = family(EstimatorFamily::naive);
    fixed.naive_normalizer = 0.6;
    CHECK_NOTHROW(monte_carlo(fixed, e, e, p, p, opts));

    const auto dense = LabeledMatrixd::constant(1, 4, 0.7, Role::propensity);
    const auto e4 = LabeledMatrixd::constant(1, 4, 1.0);
    opts.replicas = 20000;
    const auto res = monte_carlo(family(EstimatorFamily::snips), e4, e4, dense, dense, opts);
    // P(empty) = 0.3^4 = 0.0081
    CHECK(res.empty_resamples > 0);
    CHECK(static_cast<double>(res.empty_resamples) < 0.01 * 20000);
  }

  TEST_CASE("exhaustive moments match closed forms") {
    gen::Rng rng(71);
    for (int t = 0; t < 20; ++t) {
      const auto in = gen::instance(rng, {3, 4, 0.05, 0.95, false});
      AnalyticInputs<double> ai{in.e, in.e_hat, in.p_true, in.p_hat, ShapingFunction::sine(),
                                gen::matrix(rng, in.e.rows(), in.e.cols(), 0.0, 1.0, Role::exponent), 2.0};
      for (auto f : {EstimatorFamily::naive, EstimatorFamily::eib, EstimatorFamily::ips, EstimatorFamily::dr,
                     EstimatorFamily::d_ips, EstimatorFamily::d_dr}) {
        EstimatorSpecd spec = family(f);
        spec.shaping = ai.shaping;
        spec.alpha = ai.alpha;
        spec.naive_normalizer = ai.mask_size;
        const auto ex = exhaustive_moments(spec, in.e, in.e_hat, in.p_true, in.p_hat);
        const auto rep = bias_variance_report(f, ai);
        CHECK(std::abs(ex.variance - rep.variance) <= 1e-10);
        CHECK(std::abs(ex.bias - rep.bias) <= 1e-10);
        CHECK(std::abs(ex.mean - closed_form_mean(f, ai)) <= 1e-10);
      }
    }
    const auto too_big = LabeledMatrixd::constant(4, 4, 0.5, Role::propensity);
    CHECK_THROWS_AS(exhaustive_moments(family(EstimatorFamily::ips), too_big, too_big, too_big, too_big), DomainError);
  }

  TEST_CASE("exhaustive moments condition on a nonempty mask") {
    const auto p = row({0.5, 0.5}, Role::propensity);
    const auto e = row({1.0, 3.0});
    const auto ex = exhaustive_moments(family(EstimatorFamily::naive), e, e, p, p);
    CHECK(ex.nonempty_probability == doctest::Approx(0.75));
    // masks {10, 01, 11} equally likely: values 1, 3, 2
    CHECK(ex.mean == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(ex.variance == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("general monte carlo matches exact moments") {
    gen::Rng rng(73);
    const auto in = gen::instance(rng, {3, 3, 0.2, 0.8, true});
    GeneralEstimatorForm f;
    f.f_coeff = [](int o, double p) { return o / p; };
    f.h_coeff = [](int o, double p) { return p - o; };
    MonteCarloOptions opts;
    opts.replicas = 100000;
    const auto mc = monte_carlo_general(f, in.e, in.e_hat, in.p_true, in.p_hat, opts);
    const auto exact = general_form_moments(f, in.e, in.e_hat, in.p_true, in.p_hat);
    CHECK(std::abs(mc.cov - exact.cov) <= 4.0 * mc.cov_standard_error);
    CHECK(mc.var_reg == doctest::Approx(exact.var_reg).epsilon(0.03));
  }
}
