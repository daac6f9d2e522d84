#include "mnar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mnar {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("auc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw DomainError("auc: non-finite score at index " + std::to_string(i));
    positives += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw UndefinedMetricError("auc: needs at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // midranks for tie groups
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) positive_rank_sum += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(positives);
  const double nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

NdcgResult ndcg_at_k(const std::vector<RankedList>& users, int k) {
  if (k < 1) throw DomainError("ndcg_at_k: k must be >= 1");
  NdcgResult out;
  out.per_user.assign(users.size(), std::numeric_limits<double>::quiet_NaN());
  KahanSum<double> total;
  for (std::size_t u = 0; u < users.size(); ++u) {
    const auto& list = users[u];
    if (list.scores.size() != list.relevance.size()) throw DimensionError("ndcg_at_k: ragged user list");
    const int positives = static_cast<int>(std::count(list.relevance.begin(), list.relevance.end(), 1));
    if (positives == 0) continue;

    std::vector<std::size_t> order(list.scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return list.scores[a] > list.scores[b]; });
    const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    double dcg = 0.0;
    for (std::size_t r = 0; r < depth; ++r) {
      const double g = std::exp2(static_cast<double>(list.relevance[order[r]])) - 1.0;
      dcg += g / std::log2(static_cast<double>(r) + 2.0);
    }
    double ideal = 0.0;
    const std::size_t ideal_depth = std::min<std::size_t>(depth, static_cast<std::size_t>(positives));
    for (std::size_t r = 0; r < ideal_depth; ++r) ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);

    out.per_user[u] = dcg / ideal;
    total.add(out.per_user[u]);
    ++out.evaluated_users;
  }
  if (out.evaluated_users == 0) throw UndefinedMetricError("ndcg_at_k: no user has a positive item");
  out.mean = total.value() / static_cast<double>(out.evaluated_users);
  return out;
}

double gain(double base_metric, double dynamic_metric) {
  if (!(base_metric > 0.0)) throw DomainError("gain: base metric must be positive");
  return (dynamic_metric - base_metric) / base_metric;
}

EvalResult evaluate_predictions(const RowMajorMatrix<double>& scores, const LabeledMatrixd& labels,
                                const ObservationMask& test, int k) {
  detail::require_same_shape(labels, scores, "evaluate_predictions");
  detail::require_same_shape(labels, test, "evaluate_predictions");
  std::vector<double> flat_scores;
  std::vector<int> flat_labels;
  std::vector<RankedList> lists(static_cast<std::size_t>(labels.rows()));
  for (Eigen::Index r = 0; r < labels.rows(); ++r) {
    for (Eigen::Index c = 0; c < labels.cols(); ++c) {
      if (!test.observed(r, c)) continue;
      const int y = labels(r, c) > 0.5 ? 1 : 0;
      flat_scores.push_back(scores(r, c));
      flat_labels.push_back(y);
      lists[static_cast<std::size_t>(r)].scores.push_back(scores(r, c));
      lists[static_cast<std::size_t>(r)].relevance.push_back(y);
    }
  }
  EvalResult out;
  out.k = k;
  out.auc = auc(flat_scores, flat_labels);
  NdcgResult nd = ndcg_at_k(lists, k);
  out.ndcg_at_k = nd.mean;
  out.per_user_ndcg = std::move(nd.per_user);
  return out;
}

}  // namespace mnar
