#include "mnar/analytics.hpp"

namespace mnar {

RegularizerAnalysis regularizer_analysis(std::span<const double> est_samples, std::span<const double> reg_samples) {
  if (est_samples.size() != reg_samples.size()) throw DimensionError("regularizer_analysis: sample lengths differ");
  if (est_samples.size() < 2) throw DomainError("regularizer_analysis: need at least 2 samples");
  const double n = static_cast<double>(est_samples.size());

  KahanSum<double> sum_est;
  KahanSum<double> sum_reg;
  for (std::size_t k = 0; k < est_samples.size(); ++k) {
    sum_est.add(est_samples[k]);
    sum_reg.add(reg_samples[k]);
  }
  const double mean_est = sum_est.value() / n;
  const double mean_reg = sum_reg.value() / n;

  KahanSum<double> cross;
  KahanSum<double> square;
  for (std::size_t k = 0; k < est_samples.size(); ++k) {
    const double dr = reg_samples[k] - mean_reg;
    cross.add((est_samples[k] - mean_est) * dr);
    square.add(dr * dr);
  }

  RegularizerAnalysis out;
  out.cov = cross.value() / (n - 1.0);
  out.var_reg = square.value() / (n - 1.0);
  out.reducible = out.cov < 0.0;
  if (out.var_reg == 0.0) {
    if (out.cov != 0.0) throw DegenerateError("regularizer_analysis: zero regularizer variance with non-zero covariance");
    out.lambda_opt = 0.0;
  } else {
    out.lambda_opt = -out.cov / out.var_reg;
  }
  return out;
}

}  // namespace mnar
