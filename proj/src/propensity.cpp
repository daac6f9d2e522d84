#include "mnar/propensity.hpp"

#include <algorithm>
#include <cmath>

namespace mnar {
namespace {

constexpr int kLogisticIterations = 500;
constexpr double kLogisticStep = 1.0;
constexpr double kLogisticRidge = 1e-4;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

const char* propensity_kind_name(PropensityKind kind) {
  switch (kind) {
    case PropensityKind::oracle: return "oracle";
    case PropensityKind::factorized_popularity: return "factorized_popularity";
    case PropensityKind::logistic: return "logistic";
  }
  return "unknown";
}

PropensityKind propensity_kind_from_name(const std::string& name) {
  if (name == "oracle") return PropensityKind::oracle;
  if (name == "factorized_popularity") return PropensityKind::factorized_popularity;
  if (name == "logistic") return PropensityKind::logistic;
  throw DomainError("unknown propensity kind '" + name + "'");
}

PropensityModel fit_propensity(const ObservationMask& mask, PropensityKind kind, double clip_floor) {
  if (!(clip_floor > 0.0 && clip_floor < 1.0)) throw DomainError("fit_propensity: clip_floor outside (0,1)");
  if (mask.observed_count() == 0) throw EmptyObservationError("fit_propensity: mask has no observed cells");
  const Eigen::Index rows = mask.rows();
  const Eigen::Index cols = mask.cols();
  const Eigen::MatrixXd o = mask.bits().cast<double>();
  RowMajorMatrix<double> p(rows, cols);

  switch (kind) {
    case PropensityKind::factorized_popularity: {
      Eigen::VectorXd row_rate = o.rowwise().mean();
      Eigen::VectorXd col_rate = o.colwise().mean().transpose();
      const double global = o.mean();
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
          p(r, c) = std::clamp(row_rate(r) * col_rate(c) / global, clip_floor, 1.0);
      return PropensityModel(kind, clip_floor, LabeledMatrixd(std::move(p), Role::propensity), std::move(row_rate),
                             std::move(col_rate), global);
    }
    case PropensityKind::logistic: {
      const double rate = std::clamp(o.mean(), 1e-6, 1.0 - 1e-6);
      double b0 = logit(rate);
      Eigen::VectorXd bu = Eigen::VectorXd::Zero(rows);
      Eigen::VectorXd bi = Eigen::VectorXd::Zero(cols);
      Eigen::MatrixXd residual(rows, cols);
      for (int it = 0; it < kLogisticIterations; ++it) {
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < cols; ++c) residual(r, c) = sigmoid(b0 + bu(r) + bi(c)) - o(r, c);
        // gradients of the mean log-loss per parameter block
        const Eigen::VectorXd gu = residual.rowwise().mean() + kLogisticRidge * bu;
        const Eigen::VectorXd gi = residual.colwise().mean().transpose() + kLogisticRidge * bi;
        const double g0 = residual.mean();
        bu -= kLogisticStep * gu;
        bi -= kLogisticStep * gi;
        b0 -= kLogisticStep * g0;
      }
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) p(r, c) = std::clamp(sigmoid(b0 + bu(r) + bi(c)), clip_floor, 1.0);
      return PropensityModel(kind, clip_floor, LabeledMatrixd(std::move(p), Role::propensity), std::move(bu),
                             std::move(bi), b0);
    }
    case PropensityKind::oracle:
      throw DomainError("fit_propensity: the oracle model is built from p_true with oracle_propensity");
  }
  throw DomainError("fit_propensity: unknown kind");
}

PropensityModel oracle_propensity(const LabeledMatrixd& p_true) {
  LabeledMatrixd p = p_true.with_role(Role::propensity);
  const double floor = p.values().minCoeff();
  return PropensityModel(PropensityKind::oracle, floor, std::move(p), Eigen::VectorXd(), Eigen::VectorXd(), 0.0);
}

}  // namespace mnar
