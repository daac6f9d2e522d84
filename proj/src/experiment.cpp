#include "mnar/experiment.hpp"

#include <cmath>
#include <thread>

namespace mnar {
namespace {

constexpr std::uint64_t kSplitStream = 7;

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Sample standard deviation (n - 1); zero for a single run.
MeanStd mean_std(const std::vector<double>& x) {
  MeanStd out;
  KahanSum<double> s;
  for (double v : x) s.add(v);
  out.mean = s.value() / static_cast<double>(x.size());
  if (x.size() < 2) return out;
  KahanSum<double> q;
  for (double v : x) q.add((v - out.mean) * (v - out.mean));
  out.std = std::sqrt(q.value() / static_cast<double>(x.size() - 1));
  return out;
}

bool has_imputation(EstimatorFamily f) {
  return f == EstimatorFamily::eib || f == EstimatorFamily::dr || f == EstimatorFamily::d_dr;
}

std::vector<RunRecord> run_seed(const ExperimentConfig& cfg, int s) {
  SyntheticSpec spec = cfg.data;
  spec.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(s));
  const SyntheticData data = generate_synthetic(spec);
  RngStream split_rng(spec.seed, kSplitStream);
  const ExperimentSplit split = make_experiment_split(data.p_true, cfg.test_per_row, split_rng);

  const LabeledMatrixd labels =
      cfg.data.label_mode == LabelMode::binary ? data.y_true : binarize(data.y_true, 3.0);
  PropensityModel prop = cfg.propensity == PropensityKind::oracle
                             ? oracle_propensity(data.p_true)
                             : fit_propensity(split.train, cfg.propensity, cfg.clip_floor);
  TrainingProblem problem{labels, split.train, prop.p_hat()};

  std::vector<RunRecord> out;
  for (EstimatorFamily family : cfg.families) {
    TrainConfig tc = cfg.train;
    tc.loss_family = family;
    tc.seed = spec.seed;
    MFModel model;
    if (cfg.joint && has_imputation(family)) {
      TrainConfig ic = cfg.imputation;
      ic.seed = spec.seed;
      model = train_joint(problem, tc, ic).prediction;
    } else {
      model = train(problem, tc).model;
    }
    out.push_back(RunRecord{s, family, evaluate_predictions(model.predict_all(), labels, split.test, cfg.ndcg_k)});
  }
  return out;
}

}  // namespace

const FamilySummary& ExperimentResult::summary_for(EstimatorFamily family) const {
  for (const auto& s : summary)
    if (s.family == family) return s;
  throw DomainError(std::string("experiment has no family ") + family_name(family));
}

std::vector<double> ExperimentResult::auc_per_seed(EstimatorFamily family) const {
  std::vector<double> out;
  for (const auto& r : runs)
    if (r.family == family) out.push_back(r.eval.auc);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.seeds < 1) throw ConfigError("experiment: seeds must be >= 1");
  if (cfg.families.empty()) throw ConfigError("experiment: no estimator families");
  cfg.data.validate();
  cfg.train.validate();

  std::vector<std::vector<RunRecord>> per_seed(static_cast<std::size_t>(cfg.seeds));
  const unsigned workers = std::max(1u, std::min(cfg.threads, static_cast<unsigned>(cfg.seeds)));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](unsigned w) {
    try {
      for (int s = static_cast<int>(w); s < cfg.seeds; s += static_cast<int>(workers))
        per_seed[static_cast<std::size_t>(s)] = run_seed(cfg, s);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  ExperimentResult out;
  for (auto& runs : per_seed)
    for (auto& r : runs) out.runs.push_back(std::move(r));
  for (EstimatorFamily family : cfg.families) {
    std::vector<double> aucs;
    std::vector<double> ndcgs;
    for (const auto& r : out.runs) {
      if (r.family != family) continue;
      aucs.push_back(r.eval.auc);
      ndcgs.push_back(r.eval.ndcg_at_k);
    }
    const MeanStd a = mean_std(aucs);
    const MeanStd n = mean_std(ndcgs);
    out.summary.push_back(FamilySummary{family, a.mean, a.std, n.mean, n.std});
  }
  return out;
}

}  // namespace mnar
