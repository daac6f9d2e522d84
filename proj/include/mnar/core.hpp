#ifndef MNAR_CORE_HPP_
#define MNAR_CORE_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mnar {

// Error hierarchy. The CLI maps IoError to exit code 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define MNAR_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(what) {}            \
    const char* kind() const noexcept override { return tag; }         \
  };

MNAR_DEFINE_ERROR(DimensionError, "dimension")
MNAR_DEFINE_ERROR(DomainError, "domain")
MNAR_DEFINE_ERROR(EmptyObservationError, "empty_observation")
MNAR_DEFINE_ERROR(EvaluationError, "evaluation")
MNAR_DEFINE_ERROR(ValidationError, "validation")
MNAR_DEFINE_ERROR(UnsupportedMetricError, "unsupported_metric")
MNAR_DEFINE_ERROR(DegenerateError, "degenerate")
MNAR_DEFINE_ERROR(UndefinedMetricError, "undefined_metric")
MNAR_DEFINE_ERROR(DivergenceError, "divergence")
MNAR_DEFINE_ERROR(ConfigError, "config")
MNAR_DEFINE_ERROR(IoError, "io")

#undef MNAR_DEFINE_ERROR

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MaskBits = RowMajorMatrix<std::uint8_t>;

/// Role tag of a LabeledMatrix. It only selects which cell invariants are enforced.
enum class Role {
  generic,        // any finite value (labels, predictions, errors)
  binary_labels,  // {0, 1}
  propensity,     // (0, 1]
  exponent,       // [0, 1], per-cell alpha
};

inline const char* role_name(Role role) {
  switch (role) {
    case Role::generic: return "generic";
    case Role::binary_labels: return "binary_labels";
    case Role::propensity: return "propensity";
    case Role::exponent: return "exponent";
  }
  return "unknown";
}

/// Compensated summation. Adding in a fixed order keeps results identical across platforms.
template <typename Scalar>
class KahanSum {
 public:
  void add(Scalar x) {
    const Scalar y = x - compensation_;
    const Scalar t = sum_ + y;
    compensation_ = (t - sum_) - y;
    sum_ = t;
  }
  Scalar value() const { return sum_; }

 private:
  Scalar sum_{0};
  Scalar compensation_{0};
};

/// Dense M x N matrix of per-(user, item) values. Immutable after construction.
template <typename Scalar>
class LabeledMatrix {
 public:
  using Matrix = RowMajorMatrix<Scalar>;

  explicit LabeledMatrix(Matrix values, Role role = Role::generic)
      : values_(std::move(values)), role_(role) {
    validate();
  }

  static LabeledMatrix constant(Eigen::Index rows, Eigen::Index cols, Scalar value,
                                Role role = Role::generic) {
    if (rows < 1 || cols < 1) throw DimensionError("matrix must be at least 1x1");
    return LabeledMatrix(Matrix::Constant(rows, cols, value), role);
  }

  /// Convenience for tests and small inline instances: row-major nested lists.
  static LabeledMatrix from_rows(const std::vector<std::vector<Scalar>>& rows,
                                 Role role = Role::generic) {
    if (rows.empty() || rows.front().empty()) throw DimensionError("matrix must be at least 1x1");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.front().size()) throw DimensionError("ragged rows");
      for (std::size_t c = 0; c < rows[r].size(); ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return LabeledMatrix(std::move(m), role);
  }

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  Eigen::Index size() const { return values_.size(); }
  Role role() const { return role_; }
  const Matrix& values() const { return values_; }
  Scalar operator()(Eigen::Index r, Eigen::Index c) const { return values_(r, c); }

  template <typename Other>
  bool same_shape(const Other& other) const {
    return rows() == other.rows() && cols() == other.cols();
  }

  LabeledMatrix with_role(Role role) const { return LabeledMatrix(values_, role); }

 private:
  void validate() const {
    if (values_.rows() < 1 || values_.cols() < 1) throw DimensionError("matrix must be at least 1x1");
    for (Eigen::Index r = 0; r < values_.rows(); ++r) {
      for (Eigen::Index c = 0; c < values_.cols(); ++c) {
        const Scalar v = values_(r, c);
        if (!std::isfinite(v)) throw DomainError(cell_message("non-finite value", r, c));
        switch (role_) {
          case Role::generic: break;
          case Role::binary_labels:
            if (v != Scalar(0) && v != Scalar(1)) throw DomainError(cell_message("label not in {0,1}", r, c));
            break;
          case Role::propensity:
            if (!(v > Scalar(0) && v <= Scalar(1)))
              throw DomainError(cell_message("propensity outside (0,1]", r, c));
            break;
          case Role::exponent:
            if (!(v >= Scalar(0) && v <= Scalar(1))) throw DomainError(cell_message("alpha outside [0,1]", r, c));
            break;
        }
      }
    }
  }

  static std::string cell_message(const char* what, Eigen::Index r, Eigen::Index c) {
    return std::string(what) + " at (" + std::to_string(r) + ", " + std::to_string(c) + ")";
  }

  Matrix values_;
  Role role_;
};

using LabeledMatrixd = LabeledMatrix<double>;
using LabeledMatrixf = LabeledMatrix<float>;

/// Binary realization of the observation indicators o_{u,i}.
class ObservationMask {
 public:
  explicit ObservationMask(MaskBits bits) : bits_(std::move(bits)) {
    if (bits_.rows() < 1 || bits_.cols() < 1) throw DimensionError("mask must be at least 1x1");
    for (Eigen::Index k = 0; k < bits_.size(); ++k) {
      const auto b = bits_.data()[k];
      if (b > 1) throw DomainError("mask bit not in {0,1}");
      observed_count_ += b;
    }
  }

  static ObservationMask full(Eigen::Index rows, Eigen::Index cols) {
    return ObservationMask(MaskBits::Ones(rows, cols));
  }
  static ObservationMask empty(Eigen::Index rows, Eigen::Index cols) {
    return ObservationMask(MaskBits::Zero(rows, cols));
  }
  static ObservationMask from_rows(const std::vector<std::vector<int>>& rows) {
    if (rows.empty() || rows.front().empty()) throw DimensionError("mask must be at least 1x1");
    MaskBits m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.front().size()) throw DimensionError("ragged rows");
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        if (rows[r][c] != 0 && rows[r][c] != 1) throw DomainError("mask bit not in {0,1}");
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<std::uint8_t>(rows[r][c]);
      }
    }
    return ObservationMask(std::move(m));
  }

  Eigen::Index rows() const { return bits_.rows(); }
  Eigen::Index cols() const { return bits_.cols(); }
  Eigen::Index size() const { return bits_.size(); }
  Eigen::Index observed_count() const { return observed_count_; }
  const MaskBits& bits() const { return bits_; }
  bool observed(Eigen::Index r, Eigen::Index c) const { return bits_(r, c) != 0; }
  int operator()(Eigen::Index r, Eigen::Index c) const { return bits_(r, c); }

  /// The index set O in row-major order.
  std::vector<std::pair<Eigen::Index, Eigen::Index>> observed_indices() const {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
    out.reserve(static_cast<std::size_t>(observed_count_));
    for (Eigen::Index r = 0; r < rows(); ++r)
      for (Eigen::Index c = 0; c < cols(); ++c)
        if (bits_(r, c)) out.emplace_back(r, c);
    return out;
  }

 private:
  MaskBits bits_;
  Eigen::Index observed_count_ = 0;
};

enum class ErrorKind { absolute, squared };

/// How e and the imputed errors are formed: kind, imputation scale w > 0, centre gamma.
struct ErrorSpec {
  ErrorKind kind = ErrorKind::squared;
  double imputation_scale = 1.0;
  double imputation_center = 0.0;

  void validate() const {
    if (!(imputation_scale > 0.0) || !std::isfinite(imputation_scale))
      throw DomainError("imputation scale w must be positive and finite");
    if (!std::isfinite(imputation_center)) throw DomainError("imputation centre gamma must be finite");
  }
};

template <typename Scalar>
inline Scalar apply_error_kind(ErrorKind kind, Scalar diff) {
  return kind == ErrorKind::absolute ? std::abs(diff) : diff * diff;
}

namespace detail {

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

}  // namespace detail

/// e = |y_hat - y| or (y_hat - y)^2, cellwise.
template <typename Scalar>
LabeledMatrix<Scalar> pointwise_error(const LabeledMatrix<Scalar>& y_true, const LabeledMatrix<Scalar>& y_pred,
                                      const ErrorSpec& spec) {
  spec.validate();
  detail::require_same_shape(y_true, y_pred, "pointwise_error");
  typename LabeledMatrix<Scalar>::Matrix out = (y_pred.values() - y_true.values()).unaryExpr(
      [kind = spec.kind](Scalar d) { return apply_error_kind(kind, d); });
  return LabeledMatrix<Scalar>(std::move(out));
}

/// Imputed errors w * |y_hat - gamma| or w * (y_hat - gamma)^2.
template <typename Scalar>
LabeledMatrix<Scalar> imputed_error(const LabeledMatrix<Scalar>& y_pred, const ErrorSpec& spec) {
  spec.validate();
  const auto w = static_cast<Scalar>(spec.imputation_scale);
  const auto gamma = static_cast<Scalar>(spec.imputation_center);
  typename LabeledMatrix<Scalar>::Matrix out =
      y_pred.values().unaryExpr([&](Scalar yh) { return w * apply_error_kind(spec.kind, yh - gamma); });
  return LabeledMatrix<Scalar>(std::move(out));
}

/// delta = e - e_hat.
template <typename Scalar>
LabeledMatrix<Scalar> error_deviation(const LabeledMatrix<Scalar>& e, const LabeledMatrix<Scalar>& e_hat) {
  detail::require_same_shape(e, e_hat, "error_deviation");
  return LabeledMatrix<Scalar>(e.values() - e_hat.values());
}

/// Coefficient functions of the general estimator-with-regularizer form:
///   L = 1/|D| sum [f(o,p)e + g(o,p)e_hat] + lambda * 1/|D| sum h(o,p).
struct GeneralEstimatorForm {
  using Coefficient = std::function<double(int observed, double p_hat)>;

  Coefficient f_coeff;
  Coefficient g_coeff = [](int, double) { return 0.0; };
  Coefficient h_coeff = [](int, double) { return 0.0; };
  double reg_weight = 0.0;

  /// f(0, p) must vanish; checked on a sample grid of p in (0, 1].
  void validate() const {
    if (!f_coeff || !g_coeff || !h_coeff) throw ValidationError("general form: missing coefficient function");
    if (!(reg_weight >= 0.0) || !std::isfinite(reg_weight)) throw DomainError("general form: lambda must be >= 0");
    for (int k = 1; k <= 100; ++k) {
      const double p = k / 100.0;
      if (f_coeff(0, p) != 0.0)
        throw ValidationError("general form: f(0, p) != 0 at p = " + std::to_string(p));
    }
  }
};

}  // namespace mnar

#endif  // MNAR_CORE_HPP_
