#ifndef MNAR_EXPERIMENT_HPP_
#define MNAR_EXPERIMENT_HPP_

#include <vector>

#include "mnar/metrics.hpp"
#include "mnar/propensity.hpp"
#include "mnar/simulation.hpp"
#include "mnar/training.hpp"

namespace mnar {

/// Repeated train/evaluate runs on synthetic MNAR data with a MAR test split.
struct ExperimentConfig {
  SyntheticSpec data;
  Eigen::Index test_per_row = 10;
  PropensityKind propensity = PropensityKind::oracle;
  double clip_floor = kDefaultClipFloor;
  TrainConfig train;
  bool joint = false;  // eib / dr / d_dr families train with a joint imputation model
  TrainConfig imputation;
  std::vector<EstimatorFamily> families{EstimatorFamily::naive, EstimatorFamily::dr, EstimatorFamily::d_dr};
  int seeds = 10;
  int ndcg_k = 5;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct RunRecord {
  int seed_index = 0;
  EstimatorFamily family = EstimatorFamily::naive;
  EvalResult eval;
};

struct FamilySummary {
  EstimatorFamily family = EstimatorFamily::naive;
  double auc_mean = 0.0;
  double auc_std = 0.0;
  double ndcg_mean = 0.0;
  double ndcg_std = 0.0;
};

struct ExperimentResult {
  std::vector<RunRecord> runs;  // seed-major, families in config order
  std::vector<FamilySummary> summary;

  const FamilySummary& summary_for(EstimatorFamily family) const;
  std::vector<double> auc_per_seed(EstimatorFamily family) const;
};

/// Every family sees the same data, split, propensities and initial parameters
/// within a seed. Seeds run in parallel up to `threads`; results do not depend on it.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace mnar

#endif  // MNAR_EXPERIMENT_HPP_
