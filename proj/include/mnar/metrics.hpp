#ifndef MNAR_METRICS_HPP_
#define MNAR_METRICS_HPP_

#include <span>
#include <vector>

#include "mnar/core.hpp"

namespace mnar {

/// Mann-Whitney AUC; tied scores count 1/2. Throws UndefinedMetricError on single-class input.
double auc(std::span<const double> scores, std::span<const int> labels);

/// One user's candidate list.
struct RankedList {
  std::vector<double> scores;
  std::vector<int> relevance;  // {0, 1}
};

struct NdcgResult {
  double mean = 0.0;
  std::vector<double> per_user;  // NaN for skipped users
  std::size_t evaluated_users = 0;
};

/// DCG@k with gain 2^rel - 1 and log2(rank + 1) discount over the ideal DCG, averaged
/// over users with at least one positive. Ties in score keep the candidate order.
NdcgResult ndcg_at_k(const std::vector<RankedList>& users, int k);

/// Relative improvement (dynamic - base) / base.
double gain(double base_metric, double dynamic_metric);

struct EvalResult {
  double auc = 0.0;
  double ndcg_at_k = 0.0;
  int k = 5;
  std::vector<double> per_user_ndcg;
};

/// AUC over all test cells and per-user NDCG@k with each user's test items as candidates.
EvalResult evaluate_predictions(const RowMajorMatrix<double>& scores, const LabeledMatrixd& labels,
                                const ObservationMask& test, int k = 5);

}  // namespace mnar

#endif  // MNAR_METRICS_HPP_
