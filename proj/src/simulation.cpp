#include "mnar/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace mnar {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

bool undefined_on_empty(const EstimatorSpec<double>& spec) {
  switch (spec.family) {
    case EstimatorFamily::naive: return !spec.naive_normalizer.has_value();
    case EstimatorFamily::snips:
    case EstimatorFamily::d_snips: return true;
    default: return false;
  }
}

void check_mc_inputs(const LabeledMatrixd& e, const LabeledMatrixd& e_hat, const LabeledMatrixd& p_true,
                     const LabeledMatrixd& p_hat, const MonteCarloOptions& opts, const char* what) {
  detail::require_same_shape(e, e_hat, what);
  detail::require_same_shape(e, p_true, what);
  detail::require_same_shape(e, p_hat, what);
  if (p_true.role() != Role::propensity) throw DomainError(std::string(what) + ": p_true must be a propensity matrix");
  if (opts.replicas < 2) throw DomainError(std::string(what) + ": replicas must be >= 2");
}

/// Runs body(i) for i in [0, n) on up to `threads` workers with contiguous blocks.
template <typename Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::min<std::size_t>(n, 256))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t block = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t begin = w * block;
        const std::size_t end = std::min(n, begin + block);
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

Moments sample_moments(const std::vector<double>& x) {
  KahanSum<double> sum;
  for (double v : x) sum.add(v);
  const double n = static_cast<double>(x.size());
  Moments m;
  m.mean = sum.value() / n;
  KahanSum<double> sq;
  for (double v : x) sq.add((v - m.mean) * (v - m.mean));
  m.variance = sq.value() / (n - 1.0);
  return m;
}

constexpr int kMaxResamplesPerReplica = 1000;

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void SyntheticSpec::validate() const {
  if (rows < 1 || cols < 1) throw DomainError("synthetic spec: rows and cols must be positive");
  if (latent_rank < 1) throw DomainError("synthetic spec: latent_rank must be positive");
  if (!(propensity_floor > 0.0 && propensity_floor < 1.0))
    throw DomainError("synthetic spec: propensity_floor outside (0,1)");
  if (!std::isfinite(propensity_slope) || !std::isfinite(propensity_center))
    throw DomainError("synthetic spec: propensity slope and center must be finite");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw DomainError("synthetic spec: noise must be >= 0");
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  RngStream factors(spec.seed, 0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_rank));
  Eigen::MatrixXd u(spec.rows, spec.latent_rank);
  Eigen::MatrixXd v(spec.cols, spec.latent_rank);
  for (Eigen::Index r = 0; r < u.rows(); ++r)
    for (Eigen::Index k = 0; k < u.cols(); ++k) u(r, k) = factors.normal();
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    for (Eigen::Index k = 0; k < v.cols(); ++k) v(r, k) = factors.normal();

  RngStream noise(spec.seed, 1);
  RowMajorMatrix<double> raw(spec.rows, spec.cols);
  RowMajorMatrix<double> y(spec.rows, spec.cols);
  RowMajorMatrix<double> p(spec.rows, spec.cols);
  for (Eigen::Index r = 0; r < spec.rows; ++r) {
    for (Eigen::Index c = 0; c < spec.cols; ++c) {
      const double s = scale * u.row(r).dot(v.row(c)) + spec.noise * noise.normal();
      raw(r, c) = s;
      if (spec.label_mode == LabelMode::binary) {
        y(r, c) = s > 0.0 ? 1.0 : 0.0;
      } else {
        y(r, c) = std::clamp(std::round(3.0 + 1.25 * s), 1.0, 5.0);
      }
      p(r, c) = std::clamp(sigmoid(spec.propensity_slope * (s - spec.propensity_center)), spec.propensity_floor, 1.0);
    }
  }
  return SyntheticData{LabeledMatrixd(std::move(y), spec.label_mode == LabelMode::binary ? Role::binary_labels : Role::generic),
                       LabeledMatrixd(std::move(p), Role::propensity), LabeledMatrixd(std::move(raw), Role::generic)};
}

LabeledMatrixd binarize(const LabeledMatrixd& ratings, double threshold) {
  RowMajorMatrix<double> out = (ratings.values().array() > threshold).cast<double>();
  return LabeledMatrixd(std::move(out), Role::binary_labels);
}

ObservationMask sample_mask(const LabeledMatrixd& p_true, RngStream& rng) {
  if (p_true.role() != Role::propensity) throw DomainError("sample_mask: p_true must be a propensity matrix");
  MaskBits bits(p_true.rows(), p_true.cols());
  for (Eigen::Index r = 0; r < bits.rows(); ++r)
    for (Eigen::Index c = 0; c < bits.cols(); ++c) bits(r, c) = rng.uniform() < p_true(r, c) ? 1 : 0;
  return ObservationMask(std::move(bits));
}

ExperimentSplit make_experiment_split(const LabeledMatrixd& p_true, Eigen::Index test_per_row, RngStream& rng) {
  if (test_per_row < 1 || test_per_row >= p_true.cols())
    throw DomainError("make_experiment_split: test_per_row must lie in [1, cols)");
  MaskBits test = MaskBits::Zero(p_true.rows(), p_true.cols());
  std::vector<Eigen::Index> items(static_cast<std::size_t>(p_true.cols()));
  for (Eigen::Index r = 0; r < p_true.rows(); ++r) {
    std::iota(items.begin(), items.end(), Eigen::Index{0});
    // partial Fisher-Yates driven by the stream's own uniforms
    for (Eigen::Index k = 0; k < test_per_row; ++k) {
      const auto span = static_cast<double>(items.size() - static_cast<std::size_t>(k));
      const auto j = static_cast<std::size_t>(k) + static_cast<std::size_t>(rng.uniform() * span);
      std::swap(items[static_cast<std::size_t>(k)], items[j]);
      test(r, items[static_cast<std::size_t>(k)]) = 1;
    }
  }
  MaskBits train(p_true.rows(), p_true.cols());
  for (Eigen::Index r = 0; r < train.rows(); ++r)
    for (Eigen::Index c = 0; c < train.cols(); ++c) {
      const bool drawn = rng.uniform() < p_true(r, c);
      train(r, c) = (drawn && !test(r, c)) ? 1 : 0;
    }
  return ExperimentSplit{ObservationMask(std::move(train)), ObservationMask(std::move(test))};
}

MonteCarloResult monte_carlo(const EstimatorSpec<double>& spec, const LabeledMatrixd& e, const LabeledMatrixd& e_hat,
                             const LabeledMatrixd& p_true, const LabeledMatrixd& p_hat, const MonteCarloOptions& opts) {
  check_mc_inputs(e, e_hat, p_true, p_hat, opts, "monte_carlo");
  const bool resample = undefined_on_empty(spec);
  std::vector<double> values(opts.replicas);
  std::vector<std::uint32_t> empties(opts.replicas, 0);

  parallel_for(opts.replicas, opts.threads, [&](std::size_t i) {
    RngStream rng(opts.seed, i);
    for (int attempt = 0;; ++attempt) {
      ObservationMask mask = sample_mask(p_true, rng);
      if (resample && mask.observed_count() == 0) {
        if (attempt >= kMaxResamplesPerReplica)
          throw DegenerateError("monte_carlo: observation mask stays empty; propensities are degenerate");
        ++empties[i];
        continue;
      }
      values[i] = evaluate(spec, e, e_hat, p_hat, mask);
      break;
    }
  });

  MonteCarloResult out;
  out.replicas = opts.replicas;
  for (auto n : empties) out.empty_resamples += n;
  if (static_cast<double>(out.empty_resamples) > 0.01 * static_cast<double>(opts.replicas))
    throw DegenerateError("monte_carlo: " + std::to_string(out.empty_resamples) + " empty masks in " +
                          std::to_string(opts.replicas) + " replicas exceeds the 1% limit");

  const Moments m = sample_moments(values);
  out.empirical_mean = m.mean;
  out.empirical_variance = m.variance;
  out.real_loss = eval_real(e);
  out.empirical_bias = std::abs(m.mean - out.real_loss);
  out.standard_error = std::sqrt(m.variance / static_cast<double>(opts.replicas));

  const bool has_closed_form = spec.family == EstimatorFamily::real || spec.family == EstimatorFamily::eib ||
                               spec.family == EstimatorFamily::ips || spec.family == EstimatorFamily::dr ||
                               spec.family == EstimatorFamily::d_ips || spec.family == EstimatorFamily::d_dr ||
                               (spec.family == EstimatorFamily::naive && spec.naive_normalizer);
  if (has_closed_form) {
    AnalyticInputs<double> in{e, e_hat, p_true, p_hat, spec.shaping, spec.alpha, spec.naive_normalizer};
    out.closed_form = bias_variance_report(spec.family, in);
  }
  if (opts.keep_values) out.values = std::move(values);
  return out;
}

GeneralMonteCarloResult monte_carlo_general(const GeneralEstimatorForm& form, const LabeledMatrixd& e,
                                            const LabeledMatrixd& e_hat, const LabeledMatrixd& p_true,
                                            const LabeledMatrixd& p_hat, const MonteCarloOptions& opts) {
  check_mc_inputs(e, e_hat, p_true, p_hat, opts, "monte_carlo_general");
  form.validate();
  std::vector<double> est(opts.replicas);
  std::vector<double> reg(opts.replicas);
  parallel_for(opts.replicas, opts.threads, [&](std::size_t i) {
    RngStream rng(opts.seed, i);
    const ObservationMask mask = sample_mask(p_true, rng);
    const GeneralEstimate g = eval_general(form, e, e_hat, p_hat, mask);
    est[i] = g.est_value;
    reg[i] = g.reg_value;
  });

  GeneralMonteCarloResult out;
  out.replicas = opts.replicas;
  const Moments me = sample_moments(est);
  const Moments mr = sample_moments(reg);
  out.mean_est = me.mean;
  out.mean_reg = mr.mean;
  out.var_est = me.variance;
  out.var_reg = mr.variance;
  std::vector<double> products(opts.replicas);
  for (std::size_t i = 0; i < opts.replicas; ++i) products[i] = (est[i] - me.mean) * (reg[i] - mr.mean);
  const Moments mp = sample_moments(products);
  const double n = static_cast<double>(opts.replicas);
  out.cov = mp.mean * n / (n - 1.0);
  out.cov_standard_error = std::sqrt(mp.variance / n);
  return out;
}

ExhaustiveResult exhaustive_moments(const EstimatorSpec<double>& spec, const LabeledMatrixd& e,
                                    const LabeledMatrixd& e_hat, const LabeledMatrixd& p_true,
                                    const LabeledMatrixd& p_hat) {
  detail::require_same_shape(e, e_hat, "exhaustive_moments");
  detail::require_same_shape(e, p_true, "exhaustive_moments");
  detail::require_same_shape(e, p_hat, "exhaustive_moments");
  const Eigen::Index cells = e.size();
  if (cells > kExhaustiveMaxCells)
    throw DomainError("exhaustive_moments: at most " + std::to_string(kExhaustiveMaxCells) + " cells");
  const bool conditional = undefined_on_empty(spec);
  const std::uint32_t patterns = 1u << cells;

  std::vector<double> prob(patterns, 0.0);
  std::vector<double> value(patterns, 0.0);
  MaskBits bits(e.rows(), e.cols());
  for (std::uint32_t pattern = 0; pattern < patterns; ++pattern) {
    double pr = 1.0;
    for (Eigen::Index k = 0; k < cells; ++k) {
      const bool on = (pattern >> k) & 1u;
      const double p = p_true.values().data()[k];
      pr *= on ? p : 1.0 - p;
      bits.data()[k] = on ? 1 : 0;
    }
    if (pr == 0.0 || (conditional && pattern == 0)) continue;
    prob[pattern] = pr;
    value[pattern] = evaluate(spec, e, e_hat, p_hat, ObservationMask(bits));
  }

  KahanSum<double> mass;
  for (double pr : prob) mass.add(pr);
  if (!(mass.value() > 0.0)) throw DegenerateError("exhaustive_moments: no mask with positive probability");
  KahanSum<double> first;
  for (std::uint32_t k = 0; k < patterns; ++k) first.add(prob[k] * value[k]);
  ExhaustiveResult out;
  out.nonempty_probability = mass.value();
  out.mean = first.value() / mass.value();
  KahanSum<double> second;
  for (std::uint32_t k = 0; k < patterns; ++k) second.add(prob[k] * (value[k] - out.mean) * (value[k] - out.mean));
  out.variance = second.value() / mass.value();
  out.bias = std::abs(out.mean - eval_real(e));
  return out;
}

}  // namespace mnar
