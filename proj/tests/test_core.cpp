#include "doctest.h"

#include "mnar/core.hpp"
#include "support/generators.hpp"

using namespace mnar;

TEST_SUITE("core") {
  TEST_CASE("labeled matrix rejects bad shapes and cells") {
    CHECK_THROWS_AS(LabeledMatrixd(RowMajorMatrix<double>(0, 3)), DimensionError);
    CHECK_THROWS_AS(LabeledMatrixd::from_rows({{1.0, 2.0}, {3.0}}), DimensionError);
    CHECK_THROWS_AS(LabeledMatrixd::from_rows({{std::nan("")}}), DomainError);
    CHECK_THROWS_AS(LabeledMatrixd::from_rows({{0.0, 0.5}}, Role::propensity), DomainError);
    CHECK_THROWS_AS(LabeledMatrixd::from_rows({{1.2}}, Role::propensity), DomainError);
    CHECK_THROWS_AS(LabeledMatrixd::from_rows({{0.5}}, Role::binary_labels), DomainError);
    CHECK_THROWS_AS(LabeledMatrixd::from_rows({{-0.1}}, Role::exponent), DomainError);
    CHECK_NOTHROW(LabeledMatrixd::from_rows({{1.0, 0.01}}, Role::propensity));
    CHECK_NOTHROW(LabeledMatrixd::from_rows({{0.0, 1.0}}, Role::binary_labels));
  }

  TEST_CASE("propensity error names the cell") {
    try {
      LabeledMatrixd::from_rows({{0.5, 0.5}, {0.5, 0.0}}, Role::propensity);
      FAIL("expected DomainError");
    } catch (const DomainError& e) {
      CHECK(std::string(e.what()).find("(1, 1)") != std::string::npos);
      CHECK(std::string(e.kind()) == "domain");
    }
  }

  TEST_CASE("observation mask counts set bits") {
    gen::Rng rng(11);
    for (int t = 0; t < 50; ++t) {
      const auto p = gen::matrix(rng, rng.integer(1, 8), rng.integer(1, 8), 0.1, 0.9, Role::propensity);
      const auto m = gen::mask(rng, p, false);
      Eigen::Index count = 0;
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) count += m(r, c);
      CHECK(m.observed_count() == count);
      CHECK(static_cast<Eigen::Index>(m.observed_indices().size()) == count);
    }
    CHECK_THROWS_AS(ObservationMask::from_rows({{0, 2}}), DomainError);
    CHECK(ObservationMask::full(2, 3).observed_count() == 6);
    CHECK(ObservationMask::empty(2, 3).observed_count() == 0);
  }

  TEST_CASE("pointwise error examples") {
    const ErrorSpec sq{ErrorKind::squared, 1.0, 0.0};
    const ErrorSpec ab{ErrorKind::absolute, 1.0, 0.0};
    auto one = [](double v) { return LabeledMatrixd::from_rows({{v}}); };
    CHECK(pointwise_error(one(1.0), one(1.0), sq)(0, 0) == 0.0);
    CHECK(pointwise_error(one(0.0), one(0.5), sq)(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(pointwise_error(one(1.0), one(0.2), ab)(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK_THROWS_AS(pointwise_error(LabeledMatrixd::constant(1, 2, 0.0), one(0.0), sq), DimensionError);
  }

  TEST_CASE("imputed error examples") {
    auto one = [](double v) { return LabeledMatrixd::from_rows({{v}}); };
    CHECK(imputed_error(one(0.3), ErrorSpec{ErrorKind::squared, 3.0, 0.3})(0, 0) == 0.0);
    CHECK(imputed_error(one(1.0), ErrorSpec{ErrorKind::squared, 1.0, 0.5})(0, 0) == doctest::Approx(0.25));
    CHECK(imputed_error(one(0.5), ErrorSpec{ErrorKind::absolute, 2.0, 0.0})(0, 0) == doctest::Approx(1.0));
    CHECK_THROWS_AS(imputed_error(one(0.5), ErrorSpec{ErrorKind::absolute, 0.0, 0.0}), DomainError);
    CHECK_THROWS_AS(imputed_error(one(0.5), ErrorSpec{ErrorKind::absolute, 1.0, INFINITY}), DomainError);
  }

  TEST_CASE("error deviation examples") {
    const auto e = LabeledMatrixd::from_rows({{1.0, 0.0}});
    const auto eh = LabeledMatrixd::from_rows({{0.4, 0.3}});
    const auto d = error_deviation(e, eh);
    CHECK(d(0, 0) == doctest::Approx(0.6));
    CHECK(d(0, 1) == doctest::Approx(-0.3));
    CHECK(error_deviation(e, e).values().isZero(0.0));
  }

  TEST_CASE("property: errors nonnegative and imputation identity") {
    gen::Rng rng(5);
    for (int t = 0; t < 200; ++t) {
      const Eigen::Index r = rng.integer(1, 5), c = rng.integer(1, 5);
      const auto y = gen::matrix(rng, r, c, -2.0, 2.0);
      const auto yh = gen::matrix(rng, r, c, -2.0, 2.0);
      const ErrorKind kind = rng.coin(0.5) ? ErrorKind::squared : ErrorKind::absolute;
      const double w = rng.uniform(0.1, 5.0);
      const double gamma = rng.uniform(-1.0, 1.0);
      CHECK((pointwise_error(y, yh, ErrorSpec{kind, 1.0, 0.0}).values().array() >= 0.0).all());

      const auto imputed = imputed_error(yh, ErrorSpec{kind, w, gamma});
      const auto via_pointwise = pointwise_error(LabeledMatrixd::constant(r, c, gamma), yh, ErrorSpec{kind, 1.0, 0.0});
      CHECK((imputed.values() - w * via_pointwise.values()).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(error_deviation(imputed, imputed).values().isZero(0.0));
    }
  }

  TEST_CASE("general form requires f(0, p) = 0") {
    GeneralEstimatorForm bad;
    bad.f_coeff = [](int, double p) { return 1.0 / p; };
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    GeneralEstimatorForm ok;
    ok.f_coeff = [](int o, double p) { return o / p; };
    CHECK_NOTHROW(ok.validate());
    ok.reg_weight = -1.0;
    CHECK_THROWS_AS(ok.validate(), DomainError);
  }

  TEST_CASE("kahan sum is exact on a cancelling sequence") {
    KahanSum<double> s;
    s.add(1.0);
    for (int i = 0; i < 10; ++i) s.add(1e-16);
    CHECK(s.value() == doctest::Approx(1.0 + 1e-15).epsilon(1e-16));
  }
}
