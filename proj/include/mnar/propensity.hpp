#ifndef MNAR_PROPENSITY_HPP_
#define MNAR_PROPENSITY_HPP_

#include <string>

#include "mnar/core.hpp"

namespace mnar {

enum class PropensityKind { oracle, factorized_popularity, logistic };

const char* propensity_kind_name(PropensityKind kind);
PropensityKind propensity_kind_from_name(const std::string& name);

constexpr double kDefaultClipFloor = 0.05;

/// A fitted propensity source. Emitted p_hat always lies in [clip_floor, 1].
class PropensityModel {
 public:
  PropensityKind kind() const { return kind_; }
  double clip_floor() const { return clip_floor_; }
  const LabeledMatrixd& p_hat() const { return p_hat_; }

  // factorized_popularity: row and column observation rates and the global rate.
  // logistic: user and item logit offsets and the global logit.
  const Eigen::VectorXd& row_parameters() const { return row_params_; }
  const Eigen::VectorXd& col_parameters() const { return col_params_; }
  double global_parameter() const { return global_; }

  friend PropensityModel fit_propensity(const ObservationMask&, PropensityKind, double);
  friend PropensityModel oracle_propensity(const LabeledMatrixd&);

 private:
  PropensityModel(PropensityKind kind, double floor, LabeledMatrixd p_hat, Eigen::VectorXd rows, Eigen::VectorXd cols,
                  double global)
      : kind_(kind), clip_floor_(floor), p_hat_(std::move(p_hat)), row_params_(std::move(rows)),
        col_params_(std::move(cols)), global_(global) {}

  PropensityKind kind_;
  double clip_floor_;
  LabeledMatrixd p_hat_;
  Eigen::VectorXd row_params_;
  Eigen::VectorXd col_params_;
  double global_;
};

/**
 * Fit p_hat from the observation pattern alone.
 *
 * factorized_popularity:  p_hat(u,i) = clip(r_u * c_i / o_bar, floor, 1), with r_u and
 *                         c_i the row and column observation rates and o_bar the global rate.
 * logistic:               p_hat(u,i) = clip(sigmoid(b0 + b_u + c_i), floor, 1), biases fit
 *                         by full-batch gradient descent on the indicator log-loss.
 *
 * Throws EmptyObservationError on an all-zero mask; `oracle` is rejected here.
 */
PropensityModel fit_propensity(const ObservationMask& mask, PropensityKind kind, double clip_floor = kDefaultClipFloor);

/// Emits p_true unchanged; clip_floor is reported as the smallest cell.
PropensityModel oracle_propensity(const LabeledMatrixd& p_true);

}  // namespace mnar

#endif  // MNAR_PROPENSITY_HPP_
