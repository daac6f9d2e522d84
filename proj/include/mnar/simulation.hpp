#ifndef MNAR_SIMULATION_HPP_
#define MNAR_SIMULATION_HPP_

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "mnar/analytics.hpp"
#include "mnar/core.hpp"
#include "mnar/estimators.hpp"

namespace mnar {

/// splitmix64 finalizer, used to decorrelate seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Counter-based stream keyed by (seed, stream index): draw k is the splitmix64
/// finalizer of key + k * golden gamma. Construction is O(1), so every Monte
/// Carlo replica can own a stream. Satisfies UniformRandomBitGenerator.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream) : state_(mix_seed(seed, stream)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double normal() { return normal_(*this); }
  std::uint64_t next() { return (*this)(); }

 private:
  std::uint64_t state_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

enum class LabelMode { binary, rating_1_to_5 };

struct SyntheticSpec {
  Eigen::Index rows = 200;
  Eigen::Index cols = 300;
  int latent_rank = 4;
  double propensity_slope = 1.5;
  double propensity_center = 1.0;
  double propensity_floor = 0.02;
  LabelMode label_mode = LabelMode::binary;
  double noise = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  LabeledMatrixd y_true;      // {0,1} or 1..5 depending on label_mode
  LabeledMatrixd p_true;      // in [propensity_floor, 1]
  LabeledMatrixd raw_score;   // latent preference the labels and propensities derive from
};

/**
 * Low-rank latent factors plus Gaussian noise give raw scores. Binary labels are
 * raw > 0; ratings are round(3 + 1.25 raw) clamped to 1..5. Propensities are
 * clamp(sigmoid(a (raw - b)), floor, 1), so liked items are observed more often.
 */
SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Ratings strictly above `threshold` map to 1.
LabeledMatrixd binarize(const LabeledMatrixd& ratings, double threshold = 3.0);

ObservationMask sample_mask(const LabeledMatrixd& p_true, RngStream& rng);

/// Training mask drawn from p_true and a uniformly random test set of
/// `test_per_row` cells per row; the two are disjoint.
struct ExperimentSplit {
  ObservationMask train;
  ObservationMask test;
};
ExperimentSplit make_experiment_split(const LabeledMatrixd& p_true, Eigen::Index test_per_row, RngStream& rng);

struct MonteCarloResult {
  std::size_t replicas = 0;
  double empirical_mean = 0.0;
  double empirical_variance = 0.0;  // unbiased (n - 1) sample variance
  double empirical_bias = 0.0;      // |mean - L_real|
  double standard_error = 0.0;      // sqrt(empirical_variance / replicas)
  double real_loss = 0.0;
  std::size_t empty_resamples = 0;
  std::optional<BiasVarianceReport<double>> closed_form;
  std::vector<double> values;  // filled only on request
};

struct MonteCarloOptions {
  std::size_t replicas = 200000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool keep_values = false;
};

/**
 * Draws independent masks, evaluates the estimator on each and summarizes.
 * Families undefined on an empty mask resample it; more than 1% empty draws
 * raise DegenerateError. Results do not depend on `threads`.
 */
MonteCarloResult monte_carlo(const EstimatorSpec<double>& spec, const LabeledMatrixd& e, const LabeledMatrixd& e_hat,
                             const LabeledMatrixd& p_true, const LabeledMatrixd& p_hat, const MonteCarloOptions& opts);

/// Joint moments of the estimator and regularizer parts of a general-form estimator.
struct GeneralMonteCarloResult {
  std::size_t replicas = 0;
  double mean_est = 0.0;
  double mean_reg = 0.0;
  double var_est = 0.0;
  double var_reg = 0.0;
  double cov = 0.0;
  double cov_standard_error = 0.0;
};

GeneralMonteCarloResult monte_carlo_general(const GeneralEstimatorForm& form, const LabeledMatrixd& e,
                                            const LabeledMatrixd& e_hat, const LabeledMatrixd& p_true,
                                            const LabeledMatrixd& p_hat, const MonteCarloOptions& opts);

struct ExhaustiveResult {
  double mean = 0.0;
  double variance = 0.0;
  double bias = 0.0;                 // |mean - L_real|
  double nonempty_probability = 1.0;  // conditioning mass for families undefined on the empty mask
};

constexpr Eigen::Index kExhaustiveMaxCells = 12;

/// Exact E_O and V_O by enumerating every mask with its probability. Families
/// undefined on the empty mask are conditioned on |O| > 0.
ExhaustiveResult exhaustive_moments(const EstimatorSpec<double>& spec, const LabeledMatrixd& e,
                                    const LabeledMatrixd& e_hat, const LabeledMatrixd& p_true,
                                    const LabeledMatrixd& p_hat);

}  // namespace mnar

#endif  // MNAR_SIMULATION_HPP_
