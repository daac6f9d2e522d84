#include "mnar/app.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "mnar/analytics.hpp"
#include "mnar/dynamic.hpp"
#include "mnar/experiment.hpp"
#include "mnar/metrics.hpp"
#include "mnar/propensity.hpp"
#include "mnar/simulation.hpp"
#include "mnar/training.hpp"

namespace mnar {
namespace {

/// Reads one config object, recording every key it is asked for with its resolved
/// value so unknown keys can be rejected and the full config echoed back.
class Section {
 public:
  Section(const Json* source, std::string where) : where_(std::move(where)) {
    if (source && !source->is_null()) {
      if (!source->is_object()) throw ConfigError(where_ + ": expected a JSON object");
      src_ = *source;
    } else {
      src_ = Json::object();
    }
    resolved_ = Json::object();
  }

  bool has(const std::string& key) const { return src_.contains(key) && !src_.at(key).is_null(); }

  double number(const std::string& key, double def) {
    const double v = has(key) ? typed(key, &Json::is_number, "a number").get<double>() : def;
    if (!std::isfinite(v)) throw ConfigError(path(key) + ": must be finite");
    resolved_[key] = v;
    return v;
  }

  std::optional<double> optional_number(const std::string& key) {
    if (!has(key)) {
      resolved_[key] = nullptr;
      return std::nullopt;
    }
    return number(key, 0.0);
  }

  long long integer(const std::string& key, long long def) {
    const long long v = has(key) ? typed(key, &Json::is_number_integer, "an integer").get<long long>() : def;
    resolved_[key] = v;
    return v;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t def) {
    std::uint64_t v = def;
    if (has(key)) {
      const Json& j = typed(key, &Json::is_number_integer, "a non-negative integer");
      if (!j.is_number_unsigned() && j.get<long long>() < 0) throw ConfigError(path(key) + ": expected a non-negative integer");
      v = j.get<std::uint64_t>();
    }
    resolved_[key] = v;
    return v;
  }

  bool boolean(const std::string& key, bool def) {
    const bool v = has(key) ? typed(key, &Json::is_boolean, "a boolean").get<bool>() : def;
    resolved_[key] = v;
    return v;
  }

  std::string string(const std::string& key, const std::string& def) {
    const std::string v = has(key) ? typed(key, &Json::is_string, "a string").get<std::string>() : def;
    resolved_[key] = v;
    return v;
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& def) {
    std::vector<double> v = def;
    if (has(key)) {
      const Json& a = typed(key, &Json::is_array, "an array of numbers");
      v.clear();
      for (const auto& x : a) {
        if (!x.is_number()) throw ConfigError(path(key) + ": expected an array of numbers");
        v.push_back(x.get<double>());
      }
    }
    resolved_[key] = v;
    return v;
  }

  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& def) {
    std::vector<std::string> v = def;
    if (has(key)) {
      const Json& a = typed(key, &Json::is_array, "an array of strings");
      v.clear();
      for (const auto& x : a) {
        if (!x.is_string()) throw ConfigError(path(key) + ": expected an array of strings");
        v.push_back(x.get<std::string>());
      }
    }
    resolved_[key] = v;
    return v;
  }

  /// Raw JSON value (matrix, scalar-or-matrix); echoed verbatim.
  const Json* raw(const std::string& key) {
    if (!has(key)) {
      resolved_[key] = nullptr;
      return nullptr;
    }
    resolved_[key] = src_.at(key);
    return &src_.at(key);
  }

  Section child(const std::string& key) {
    known_.push_back(key);
    return Section(has(key) ? &src_.at(key) : nullptr, path(key));
  }
  void attach(const std::string& key, Section& child) {
    child.finish();
    resolved_[key] = child.resolved();
  }

  void mark_known(const std::string& key) { known_.push_back(key); }

  void finish() {
    for (const auto& [key, value] : src_.items()) {
      if (resolved_.contains(key)) continue;
      if (std::find(known_.begin(), known_.end(), key) != known_.end()) continue;
      throw ConfigError((where_.empty() ? std::string("config") : where_) + ": unknown key '" + key + "'");
    }
  }

  const Json& resolved() const { return resolved_; }
  Json& resolved() { return resolved_; }
  const std::string& where() const { return where_; }
  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

 private:
  const Json& typed(const std::string& key, bool (Json::*check)() const noexcept, const char* what) const {
    const Json& v = src_.at(key);
    if (!(v.*check)()) throw ConfigError(path(key) + ": expected " + std::string(what));
    return v;
  }

  std::string where_;
  Json src_;
  Json resolved_;
  std::vector<std::string> known_;
};

struct Runtime {
  std::uint64_t seed = 0;
  std::filesystem::path out;
  unsigned threads = 1;
};

Runtime resolve_runtime(Section& root, const RunOptions& opts) {
  Runtime rt;
  rt.seed = root.u64("seed", 0);
  if (opts.seed) {
    rt.seed = *opts.seed;
    root.resolved()["seed"] = rt.seed;
  }
  // output location and thread count never influence results, so they stay out of the hash
  std::string out = root.has("out") ? root.string("out", ".") : ".";
  long long threads = root.has("threads") ? root.integer("threads", 1) : 1;
  root.resolved().erase("out");
  root.resolved().erase("threads");
  root.mark_known("out");
  root.mark_known("threads");
  if (const char* env = std::getenv("MNAR_OUT"); env && *env) out = env;
  if (const char* env = std::getenv("MNAR_THREADS"); env && *env) {
    char* end = nullptr;
    threads = std::strtoll(env, &end, 10);
    if (*end != '\0') throw ConfigError("MNAR_THREADS must be an integer");
  }
  if (opts.out) out = *opts.out;
  if (opts.threads) threads = *opts.threads;
  if (threads < 1) throw ConfigError("threads must be >= 1");
  rt.threads = static_cast<unsigned>(threads);
  rt.out = out;
  std::error_code ec;
  std::filesystem::create_directories(rt.out, ec);
  if (ec) throw IoError("cannot create output directory '" + out + "': " + ec.message());
  return rt;
}

class Artifacts {
 public:
  Artifacts(const Runtime& rt, const Json& resolved) : rt_(rt), hash_(config_hash(resolved)), config_(resolved) {}

  Json header() const {
    Json j;
    j["config_hash"] = hash_;
    j["seed"] = rt_.seed;
    return j;
  }
  Json body() const {
    Json j = header();
    j["config"] = config_;
    return j;
  }

  std::string json(const std::string& name, const Json& body) {
    return write(name, body.dump(2) + "\n");
  }

  std::string csv(const std::string& name, const std::vector<std::string>& columns,
                  const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream ss;
    ss << "# config_hash=" << hash_ << " seed=" << rt_.seed << "\n";
    for (std::size_t c = 0; c < columns.size(); ++c) ss << (c ? "," : "") << columns[c];
    ss << "\n";
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) ss << (c ? "," : "") << row[c];
      ss << "\n";
    }
    return write(name, ss.str());
  }

  std::string text(const std::string& name, const std::string& body) { return write(name, body); }

  std::vector<std::string> written;

 private:
  std::string write(const std::string& name, const std::string& body) {
    const std::string path = (rt_.out / name).string();
    write_text_file(path, body);
    written.push_back(path);
    return path;
  }

  const Runtime& rt_;
  std::string hash_;
  Json config_;
};

Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

// ---- shared config sections ----

JointObjective read_objective(Section& s) {
  JointObjective obj;
  obj.w1 = s.number("w1", 1.0);
  obj.w2 = s.number("w2", 0.1);
  obj.bias_metric = metric_from_name(s.string("bias_metric", "identity"));
  obj.variance_metric = metric_from_name(s.string("variance_metric", "identity"));
  obj.validate();
  return obj;
}

ShapingFunction shaping_from(const std::string& name) {
  if (name == "custom") throw ConfigError("custom shaping functions are not available from configuration");
  return ShapingFunction::from_name(name);
}

SyntheticSpec read_synthetic(Section& s, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.rows = s.integer("rows", 200);
  spec.cols = s.integer("cols", 300);
  spec.latent_rank = static_cast<int>(s.integer("latent_rank", 4));
  spec.propensity_slope = s.number("propensity_slope", spec.propensity_slope);
  spec.propensity_center = s.number("propensity_center", spec.propensity_center);
  spec.propensity_floor = s.number("propensity_floor", spec.propensity_floor);
  const std::string mode = s.string("label_mode", "binary");
  if (mode == "binary") {
    spec.label_mode = LabelMode::binary;
  } else if (mode == "rating_1_to_5") {
    spec.label_mode = LabelMode::rating_1_to_5;
  } else {
    throw ConfigError(s.path("label_mode") + ": expected binary or rating_1_to_5");
  }
  spec.noise = s.number("noise", spec.noise);
  spec.seed = seed;
  spec.validate();
  return spec;
}

constexpr std::uint64_t kSplitStream = 7;

struct LoadedData {
  LabeledMatrixd labels;  // binary
  ObservationMask train;
  std::optional<ObservationMask> test;
  std::optional<LabeledMatrixd> p_true;
};

LoadedData load_data(Section& s, std::uint64_t seed) {
  const std::string source = s.string("source", "synthetic");
  if (source == "synthetic") {
    const SyntheticSpec spec = read_synthetic(s, seed);
    const Eigen::Index test_per_row = s.integer("test_per_row", 10);
    const SyntheticData data = generate_synthetic(spec);
    RngStream rng(seed, kSplitStream);
    ExperimentSplit split = make_experiment_split(data.p_true, test_per_row, rng);
    LabeledMatrixd labels = spec.label_mode == LabelMode::binary ? data.y_true : binarize(data.y_true, 3.0);
    return LoadedData{std::move(labels), std::move(split.train), std::move(split.test), data.p_true};
  }
  if (source == "dataset") {
    const std::string path = s.string("path", "");
    if (path.empty()) throw ConfigError(s.path("path") + ": required for a dataset source");
    Json j;
    try {
      j = Json::parse(read_text_file(path));
    } catch (const Json::parse_error& e) {
      throw ValidationError(path + ": " + e.what());
    }
    LabeledMatrixd y(matrix_from_json(j.at("y_true"), "y_true"), Role::generic);
    const bool binary = j.value("label_mode", "binary") == "binary";
    LabeledMatrixd labels = binary ? y.with_role(Role::binary_labels) : binarize(y, 3.0);
    return LoadedData{std::move(labels), mask_from_json(j.at("train_mask"), "train_mask"),
                      mask_from_json(j.at("test_mask"), "test_mask"),
                      LabeledMatrixd(matrix_from_json(j.at("p_true"), "p_true"), Role::propensity)};
  }
  if (source == "file") {
    IngestOptions io;
    const std::string path = s.string("path", "");
    if (path.empty()) throw ConfigError(s.path("path") + ": required for a file source");
    io.format = ingest_format_from_name(s.string("format", "triples"));
    io.binarize_threshold = s.number("binarize_threshold", 3.0);
    io.remap_ids = s.boolean("remap_ids", false);
    IngestResult r = ingest(path, io);
    return LoadedData{std::move(r.labels), std::move(r.mask), std::move(r.test_mask), std::nullopt};
  }
  throw ConfigError(s.path("source") + ": expected synthetic, dataset or file");
}

struct PropensityChoice {
  PropensityKind kind = PropensityKind::oracle;
  double clip_floor = kDefaultClipFloor;
};

PropensityChoice read_propensity(Section& s, bool oracle_available) {
  PropensityChoice p;
  p.kind = propensity_kind_from_name(
      s.string("kind", oracle_available ? "oracle" : "factorized_popularity"));
  p.clip_floor = s.number("clip_floor", kDefaultClipFloor);
  if (p.kind == PropensityKind::oracle && !oracle_available)
    throw ConfigError(s.path("kind") + ": oracle propensities need synthetic or dataset data");
  return p;
}

LabeledMatrixd propensities(const PropensityChoice& choice, const LoadedData& data) {
  if (choice.kind == PropensityKind::oracle) return oracle_propensity(*data.p_true).p_hat();
  return fit_propensity(data.train, choice.kind, choice.clip_floor).p_hat();
}

struct TrainingChoice {
  TrainConfig cfg;
  bool joint = true;
  TrainConfig imputation;
};

TrainingChoice read_training(Section& s, const JointObjective& objective) {
  TrainingChoice t;
  TrainConfig& c = t.cfg;
  c.learning_rate = s.number("learning_rate", 0.01);
  c.weight_decay = s.number("weight_decay", 1e-4);
  c.epochs = static_cast<int>(s.integer("epochs", 30));
  c.batch_size = static_cast<int>(s.integer("batch_size", 1024));
  c.latent_dim = static_cast<int>(s.integer("latent_dim", 8));
  c.init_scale = s.number("init_scale", 0.1);
  c.loss_family = family_from_name(s.string("family", "d_dr"));
  c.shaping = shaping_from(s.string("shaping", "log1p"));
  c.optimizer = optimizer_from_name(s.string("optimizer", "adam"));
  const std::string norm = s.string("snips_normalizer", "shaped");
  if (norm != "shaped" && norm != "propensity") throw ConfigError(s.path("snips_normalizer") + ": shaped or propensity");
  c.snips_normalizer = norm == "shaped" ? SnipsNormalizer::shaped : SnipsNormalizer::propensity;
  c.imputation_scale = s.number("imputation_scale", 1.0);
  c.imputation_center = s.optional_number("imputation_center");
  const std::string kind = s.string("error_kind", "squared");
  if (kind != "squared" && kind != "absolute") throw ConfigError(s.path("error_kind") + ": squared or absolute");
  c.error_kind = kind == "squared" ? ErrorKind::squared : ErrorKind::absolute;
  c.objective = objective;
  t.joint = s.boolean("joint", true);
  Section imp = s.child("imputation");
  t.imputation = c;
  t.imputation.learning_rate = imp.number("learning_rate", c.learning_rate);
  t.imputation.weight_decay = imp.number("weight_decay", c.weight_decay);
  t.imputation.batch_size = static_cast<int>(imp.integer("batch_size", c.batch_size));
  t.imputation.latent_dim = static_cast<int>(imp.integer("latent_dim", c.latent_dim));
  s.attach("imputation", imp);
  c.validate();
  t.imputation.validate();
  return t;
}

bool joint_applies(const TrainingChoice& t) {
  const auto f = t.cfg.loss_family;
  return t.joint && (f == EstimatorFamily::eib || f == EstimatorFamily::dr || f == EstimatorFamily::d_dr);
}

struct Inputs {
  std::optional<LabeledMatrixd> e;
  std::optional<LabeledMatrixd> e_hat;
  std::optional<LabeledMatrixd> p_true;
  std::optional<LabeledMatrixd> p_hat;
  std::optional<ObservationMask> mask;
};

Inputs read_inputs(Section& s, bool need_mask, bool need_p_true) {
  Inputs in;
  auto matrix = [&](const char* key, Role role) -> std::optional<LabeledMatrixd> {
    const Json* j = s.raw(key);
    if (!j) return std::nullopt;
    return LabeledMatrixd(matrix_from_json(*j, s.path(key)), role);
  };
  in.e = matrix("e", Role::generic);
  in.e_hat = matrix("e_hat", Role::generic);
  in.p_true = matrix("p_true", Role::propensity);
  in.p_hat = matrix("p_hat", Role::propensity);
  if (const Json* m = s.raw("mask")) in.mask = mask_from_json(*m, s.path("mask"));
  if (!in.e) throw ConfigError(s.path("e") + ": required");
  if (!in.e_hat) in.e_hat = LabeledMatrixd::constant(in.e->rows(), in.e->cols(), 0.0, Role::generic);
  if (need_p_true && !in.p_true) throw ConfigError(s.path("p_true") + ": required");
  if (!in.p_hat) {
    if (!in.p_true) throw ConfigError(s.path("p_hat") + ": required");
    in.p_hat = *in.p_true;
  }
  if (need_mask && !in.mask) throw ConfigError(s.path("mask") + ": required");
  return in;
}

/// Alpha for dynamic families: a number, a matrix, or the static schedule from the objective.
std::optional<LabeledMatrixd> read_alpha(Section& s, EstimatorFamily family, const ShapingFunction& shaping,
                                         const JointObjective& obj, const LabeledMatrixd& p_hat) {
  const Json* a = s.raw("alpha");
  if (!is_dynamic(family)) return std::nullopt;
  if (!a) return alpha_schedule(obj, shaping, p_hat);
  if (a->is_number())
    return LabeledMatrixd::constant(p_hat.rows(), p_hat.cols(), a->get<double>(), Role::exponent);
  return LabeledMatrixd(matrix_from_json(*a, s.path("alpha")), Role::exponent);
}

EstimatorSpec<double> read_estimator(Section& s, const JointObjective& obj, const LabeledMatrixd& p_hat) {
  EstimatorSpec<double> spec;
  spec.family = family_from_name(s.string("family", "ips"));
  if (spec.family == EstimatorFamily::general)
    throw ConfigError(s.path("family") + ": the general form is only available through the library");
  const ShapingFunction shaping = shaping_from(s.string("shaping", "log1p"));
  if (is_dynamic(spec.family)) spec.shaping = shaping;
  spec.alpha = read_alpha(s, spec.family, shaping, obj, p_hat);
  const std::string norm = s.string("snips_normalizer", "shaped");
  if (norm != "shaped" && norm != "propensity") throw ConfigError(s.path("snips_normalizer") + ": shaped or propensity");
  spec.snips_normalizer = norm == "shaped" ? SnipsNormalizer::shaped : SnipsNormalizer::propensity;
  spec.naive_normalizer = s.optional_number("naive_normalizer");
  return spec;
}

std::vector<double> read_grid(Section& s, const std::string& key, double from, double to, long long count) {
  Section g = s.child(key);
  const double a = g.number("from", from);
  const double b = g.number("to", to);
  const long long n = g.integer("count", count);
  s.attach(key, g);
  if (n < 1) throw ConfigError(g.path("count") + ": must be >= 1");
  std::vector<double> out;
  for (long long k = 0; k < n; ++k) out.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1));
  return out;
}

const std::vector<std::string> kAllShapings{"identity", "sine", "log1p", "tanh"};

// ---- subcommands ----

RunOutcome cmd_generate(Section& root, const RunOptions& opts) {
  const Runtime rt = resolve_runtime(root, opts);
  Section data = root.child("data");
  const SyntheticSpec spec = read_synthetic(data, rt.seed);
  const Eigen::Index test_per_row = data.integer("test_per_row", 10);
  root.attach("data", data);
  root.finish();

  const SyntheticData d = generate_synthetic(spec);
  RngStream rng(rt.seed, kSplitStream);
  const ExperimentSplit split = make_experiment_split(d.p_true, test_per_row, rng);

  Artifacts art(rt, root.resolved());
  Json body = art.body();
  body["rows"] = spec.rows;
  body["cols"] = spec.cols;
  body["label_mode"] = spec.label_mode == LabelMode::binary ? "binary" : "rating_1_to_5";
  body["observed_train"] = split.train.observed_count();
  body["observed_test"] = split.test.observed_count();
  body["y_true"] = matrix_to_json(d.y_true.values());
  body["p_true"] = matrix_to_json(d.p_true.values());
  body["train_mask"] = mask_to_json(split.train);
  body["test_mask"] = mask_to_json(split.test);
  art.json("dataset.json", body);

  std::ostringstream tsv;
  tsv << "# config_hash=" << config_hash(root.resolved()) << " seed=" << rt.seed << "\n";
  for (Eigen::Index r = 0; r < spec.rows; ++r)
    for (Eigen::Index c = 0; c < spec.cols; ++c) {
      const char* tag = split.train.observed(r, c) ? "train" : (split.test.observed(r, c) ? "test" : nullptr);
      if (tag) tsv << r << '\t' << c << '\t' << d.y_true(r, c) << '\t' << tag << "\n";
    }
  art.text("ratings.tsv", tsv.str());

  Json summary = art.header();
  summary["rows"] = spec.rows;
  summary["cols"] = spec.cols;
  summary["observed_train"] = split.train.observed_count();
  summary["observed_test"] = split.test.observed_count();
  return RunOutcome{art.written, summary};
}

RunOutcome cmd_estimate(Section& root, const RunOptions& opts) {
  const Runtime rt = resolve_runtime(root, opts);
  Section obj_s = root.child("objective");
  const JointObjective obj = read_objective(obj_s);
  root.attach("objective", obj_s);
  Section in_s = root.child("inputs");
  const Inputs in = read_inputs(in_s, true, false);
  root.attach("inputs", in_s);
  Section est_s = root.child("estimator");
  const EstimatorSpec<double> spec = read_estimator(est_s, obj, *in.p_hat);
  root.attach("estimator", est_s);
  root.finish();

  const double value = evaluate(spec, *in.e, *in.e_hat, *in.p_hat, *in.mask);
  Artifacts art(rt, root.resolved());
  Json body = art.body();
  body["family"] = family_name(spec.family);
  body["value"] = value;
  body["observed"] = in.mask->observed_count();
  art.json("estimate.json", body);
  return RunOutcome{art.written, body};
}

RunOutcome cmd_analyze(Section& root, const RunOptions& opts) {
  const Runtime rt = resolve_runtime(root, opts);
  Section obj_s = root.child("objective");
  const JointObjective obj = read_objective(obj_s);
  root.attach("objective", obj_s);
  Section in_s = root.child("inputs");
  const Inputs in = read_inputs(in_s, false, true);
  root.attach("inputs", in_s);
  const auto families = root.strings("families", {"naive", "eib", "ips", "dr", "d_ips", "d_dr"});
  const ShapingFunction shaping = shaping_from(root.string("shaping", "log1p"));
  const Json* alpha_json = root.raw("alpha");
  const auto mask_size = root.optional_number("mask_size");
  const double rho = root.number("rho", 0.05);
  const long long hypothesis_count = root.integer("hypothesis_count", 1);
  const std::string convention = root.string("naive_convention", "exact");
  if (convention != "exact" && convention != "compat")
    throw ConfigError("naive_convention: exact or compat");
  root.finish();

  std::optional<LabeledMatrixd> alpha;
  if (!alpha_json) {
    alpha = alpha_schedule(obj, shaping, *in.p_hat);
  } else if (alpha_json->is_number()) {
    alpha = LabeledMatrixd::constant(in.e->rows(), in.e->cols(), alpha_json->get<double>(), Role::exponent);
  } else {
    alpha = LabeledMatrixd(matrix_from_json(*alpha_json, "alpha"), Role::exponent);
  }
  AnalyticInputs<double> ai{*in.e, *in.e_hat, *in.p_true, *in.p_hat, shaping, alpha, mask_size};
  if (!ai.mask_size) {
    double expected = 0.0;
    for (Eigen::Index k = 0; k < in.p_true->size(); ++k) expected += in.p_true->values().data()[k];
    ai.mask_size = expected;
  }

  Artifacts art(rt, root.resolved());
  Json body = art.body();
  body["variance_cap"] = variance_cap(obj);
  Json reports = Json::array();
  for (const auto& name : families) {
    const EstimatorFamily f = family_from_name(name);
    const auto rep =
        bias_variance_report(f, ai, convention == "compat" ? NaiveBiasConvention::compat : NaiveBiasConvention::exact);
    Json r = to_json(rep);
    r["expected_loss"] = closed_form_mean(f, ai);
    r["objective"] = aggregate_objective(obj, f, ai);
    if (is_dynamic(f)) {
      RowMajorMatrix<double> zm = f == EstimatorFamily::d_dr ? RowMajorMatrix<double>(in.e->values() - in.e_hat->values())
                                                              : in.e->values();
      const LabeledMatrixd z(std::move(zm), Role::generic);
      r["bound"] = to_json(generalization_bound(f, closed_form_mean(f, ai), z, z, *in.p_true, *in.p_hat, shaping,
                                                *alpha, rho, hypothesis_count));
    }
    reports.push_back(std::move(r));
  }
  body["mask_size"] = *ai.mask_size;
  body["reports"] = std::move(reports);
  art.json("analyze.json", body);
  return RunOutcome{art.written, body};
}

RunOutcome cmd_alpha(Section& root, const RunOptions& opts) {
  const Runtime rt = resolve_runtime(root, opts);
  Section obj_s = root.child("objective");
  const JointObjective obj = read_objective(obj_s);
  root.attach("objective", obj_s);
  const auto shapings = root.strings("shapings", kAllShapings);
  const std::vector<double> grid = root.has("p_values") ? root.numbers("p_values", {}) : read_grid(root, "p_grid", 0.01, 1.0, 100);
  root.finish();

  std::vector<std::vector<std::string>> rows;
  for (const auto& name : shapings) {
    const ShapingFunction sh = shaping_from(name);
    for (double p : grid) {
      const double a = obj.identity_metrics() ? alpha_opt_closed_form(obj, sh, p) : alpha_opt_numerical(obj, sh, p, p);
      rows.push_back({name, format_float(p), format_float(a), format_float(h_B(sh, p, p, a)),
                      format_float(h_V(sh, p, p, a)), format_float(objective_value(obj, sh, p, p, a))});
    }
  }
  Artifacts art(rt, root.resolved());
  art.csv("alpha.csv", {"shaping", "p", "alpha_opt", "h_B", "h_V", "objective"}, rows);
  Json summary = art.header();
  summary["rows"] = rows.size();
  summary["variance_cap"] = variance_cap(obj);
  return RunOutcome{art.written, summary};
}

RunOutcome cmd_mc_verify(Section& root, const RunOptions& opts) {
  const Runtime rt = resolve_runtime(root, opts);
  Section obj_s = root.child("objective");
  const JointObjective obj = read_objective(obj_s);
  root.attach("objective", obj_s);
  Section in_s = root.child("inputs");
  const Inputs in = read_inputs(in_s, false, true);
  root.attach("inputs", in_s);
  Section est_s = root.child("estimator");
  const EstimatorSpec<double> spec = read_estimator(est_s, obj, *in.p_hat);
  root.attach("estimator", est_s);
  MonteCarloOptions mc;
  mc.replicas = static_cast<std::size_t>(root.integer("replicas", 200000));
  mc.keep_values = root.boolean("keep_values", false);
  root.finish();
  mc.seed = rt.seed;
  mc.threads = rt.threads;

  const MonteCarloResult res = monte_carlo(spec, *in.e, *in.e_hat, *in.p_true, *in.p_hat, mc);
  Artifacts art(rt, root.resolved());
  Json body = art.body();
  body["family"] = family_name(spec.family);
  body.update(to_json(res));
  body["bias_within_4se"] = res.empirical_bias <= 4.0 * res.standard_error;
  body["variance_relative_error"] =
      res.closed_form && res.closed_form->variance > 0.0
          ? finite_or_null(std::abs(res.empirical_variance - res.closed_form->variance) / res.closed_form->variance)
          : Json(nullptr);
  art.json("mc_verify.json", body);
  if (mc.keep_values) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < res.values.size(); ++i) rows.push_back({std::to_string(i), format_float(res.values[i])});
    art.csv("mc_values.csv", {"replica", "value"}, rows);
  }
  return RunOutcome{art.written, body};
}

RunOutcome cmd_train(Section& root, const RunOptions& opts) {
  const Runtime rt = resolve_runtime(root, opts);
  Section data_s = root.child("data");
  const LoadedData data = load_data(data_s, rt.seed);
  root.attach("data", data_s);
  Section prop_s = root.child("propensity");
  const PropensityChoice pc = read_propensity(prop_s, data.p_true.has_value());
  root.attach("propensity", prop_s);
  Section obj_s = root.child("objective");
  const JointObjective obj = read_objective(obj_s);
  root.attach("objective", obj_s);
  Section tr_s = root.child("training");
  TrainingChoice tc = read_training(tr_s, obj);
  root.attach("training", tr_s);
  const int ndcg_k = static_cast<int>(root.integer("ndcg_k", 5));
  root.finish();

  tc.cfg.seed = rt.seed;
  tc.imputation.seed = rt.seed;
  const TrainingProblem problem{data.labels, data.train, propensities(pc, data)};
  MFModel model;
  std::vector<std::vector<std::string>> log;
  if (joint_applies(tc)) {
    const JointTrainResult r = train_joint(problem, tc.cfg, tc.imputation);
    model = r.prediction;
    for (std::size_t e = 0; e < r.prediction_losses.size(); ++e)
      log.push_back({std::to_string(e + 1), format_float(r.prediction_losses[e]), format_float(r.imputation_losses[e])});
  } else {
    const TrainResult r = train(problem, tc.cfg);
    model = r.model;
    for (std::size_t e = 0; e < r.epoch_losses.size(); ++e)
      log.push_back({std::to_string(e + 1), format_float(r.epoch_losses[e]), ""});
  }

  Artifacts art(rt, root.resolved());
  Json ckpt = model_to_json(model);
  Json meta = art.body();
  meta["family"] = family_name(tc.cfg.loss_family);
  meta["joint"] = joint_applies(tc);
  ckpt["metadata"] = std::move(meta);
  art.json("model.json", ckpt);
  art.csv("train_log.csv", {"epoch", "prediction_loss", "imputation_loss"}, log);

  Json summary = art.header();
  summary["family"] = family_name(tc.cfg.loss_family);
  summary["epochs"] = tc.cfg.epochs;
  if (data.test) {
    const EvalResult ev = evaluate_predictions(model.predict_all(), data.labels, *data.test, ndcg_k);
    summary["auc"] = ev.auc;
    summary["ndcg_at_k"] = ev.ndcg_at_k;
    summary["k"] = ev.k;
  }
  art.json("train_summary.json", summary);
  return RunOutcome{art.written, summary};
}

RunOutcome cmd_evaluate(Section& root, const RunOptions& opts) {
  const Runtime rt = resolve_runtime(root, opts);
  Section data_s = root.child("data");
  const LoadedData data = load_data(data_s, rt.seed);
  root.attach("data", data_s);
  const std::string model_path = root.string("model", "");
  const int k = static_cast<int>(root.integer("ndcg_k", 5));
  root.finish();
  if (model_path.empty()) throw ConfigError("model: checkpoint path required");
  if (!data.test) throw ConfigError("data: no test split available for evaluation");

  Json ckpt;
  try {
    ckpt = Json::parse(read_text_file(model_path));
  } catch (const Json::parse_error& e) {
    throw ValidationError(model_path + ": " + e.what());
  }
  const MFModel model = model_from_json(ckpt);
  if (model.rows() != data.labels.rows() || model.cols() != data.labels.cols())
    throw DimensionError("checkpoint shape does not match the data");
  const EvalResult ev = evaluate_predictions(model.predict_all(), data.labels, *data.test, k);

  Artifacts art(rt, root.resolved());
  Json body = art.body();
  body.update(to_json(ev));
  art.json("evaluate.json", body);
  return RunOutcome{art.written, body};
}

RunOutcome cmd_sweep(Section& root, const RunOptions& opts) {
  const Runtime rt = resolve_runtime(root, opts);
  ExperimentConfig cfg;
  Section data_s = root.child("data");
  const std::string source = data_s.string("source", "synthetic");
  if (source != "synthetic") throw ConfigError("data.source: sweeps regenerate synthetic data per seed");
  cfg.data = read_synthetic(data_s, rt.seed);
  cfg.test_per_row = data_s.integer("test_per_row", 10);
  root.attach("data", data_s);
  Section prop_s = root.child("propensity");
  const PropensityChoice pc = read_propensity(prop_s, true);
  root.attach("propensity", prop_s);
  Section obj_s = root.child("objective");
  JointObjective obj = read_objective(obj_s);
  root.attach("objective", obj_s);
  Section tr_s = root.child("training");
  const TrainingChoice tc = read_training(tr_s, obj);
  root.attach("training", tr_s);
  const auto shapings = root.strings("shapings", kAllShapings);
  const auto w2_values = root.numbers("w2_values", {0.02, 0.04, 0.06, 0.08, 1.0});
  const auto family_names = root.strings("families", {"d_dr"});
  cfg.seeds = static_cast<int>(root.integer("seeds", 10));
  cfg.ndcg_k = static_cast<int>(root.integer("ndcg_k", 5));
  root.finish();

  cfg.propensity = pc.kind;
  cfg.clip_floor = pc.clip_floor;
  cfg.train = tc.cfg;
  cfg.joint = tc.joint;
  cfg.imputation = tc.imputation;
  cfg.seed = rt.seed;
  cfg.threads = rt.threads;
  cfg.families.clear();
  for (const auto& f : family_names) cfg.families.push_back(family_from_name(f));

  std::vector<std::vector<std::string>> rows;
  for (const auto& sh : shapings) {
    for (double w2 : w2_values) {
      ExperimentConfig run = cfg;
      run.train.shaping = shaping_from(sh);
      run.train.objective.w2 = w2;
      run.train.objective.validate();
      const ExperimentResult res = run_experiment(run);
      for (const auto& s : res.summary)
        rows.push_back({sh, format_float(obj.w1), format_float(w2), family_name(s.family), format_float(s.auc_mean),
                        format_float(s.auc_std), format_float(s.ndcg_mean), format_float(s.ndcg_std)});
    }
  }
  Artifacts art(rt, root.resolved());
  art.csv("sweep.csv", {"shaping", "w1", "w2", "family", "auc_mean", "auc_std", "ndcg_mean", "ndcg_std"}, rows);
  Json summary = art.header();
  summary["rows"] = rows.size();
  return RunOutcome{art.written, summary};
}

RunOutcome cmd_report(Section& root, const RunOptions& opts) {
  const Runtime rt = resolve_runtime(root, opts);
  Section obj_s = root.child("objective");
  const JointObjective obj = read_objective(obj_s);
  root.attach("objective", obj_s);
  const auto shapings = root.strings("shapings", kAllShapings);
  const std::vector<double> ps = read_grid(root, "p_grid", 0.01, 1.0, 100);
  const std::vector<double> alphas = read_grid(root, "alpha_grid", 0.0, 1.0, 101);
  root.finish();

  std::vector<std::vector<std::string>> rows;
  Json caps = Json::object();
  for (const auto& name : shapings) {
    const ShapingFunction sh = shaping_from(name);
    double worst_hv = 0.0;
    for (double p : ps) {
      for (double a : alphas)
        rows.push_back({name, format_float(p), format_float(a), format_float(h_B(sh, p, p, a)),
                        format_float(h_V(sh, p, p, a)), format_float(objective_value(obj, sh, p, p, a))});
      const double a_opt = obj.identity_metrics() ? alpha_opt_closed_form(obj, sh, p) : alpha_opt_numerical(obj, sh, p, p);
      worst_hv = std::max(worst_hv, h_V(sh, p, p, a_opt));
    }
    caps[name] = worst_hv;
  }
  Artifacts art(rt, root.resolved());
  art.csv("surfaces.csv", {"shaping", "p", "alpha", "h_B", "h_V", "objective"}, rows);
  Json body = art.body();
  body["variance_cap"] = variance_cap(obj);
  body["max_h_V_at_alpha_opt"] = std::move(caps);
  art.json("report.json", body);
  return RunOutcome{art.written, body};
}

}  // namespace

const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names{"generate", "estimate", "analyze", "alpha", "mc-verify",
                                              "train",    "evaluate", "sweep",   "report"};
  return names;
}

std::string config_hash(const Json& resolved) { return fnv1a_hex(resolved.dump()); }

RunOutcome run_subcommand(const std::string& name, const Json& config, const RunOptions& opts) {
  Section root(&config, "");
  if (name == "generate") return cmd_generate(root, opts);
  if (name == "estimate") return cmd_estimate(root, opts);
  if (name == "analyze") return cmd_analyze(root, opts);
  if (name == "alpha") return cmd_alpha(root, opts);
  if (name == "mc-verify") return cmd_mc_verify(root, opts);
  if (name == "train") return cmd_train(root, opts);
  if (name == "evaluate") return cmd_evaluate(root, opts);
  if (name == "sweep") return cmd_sweep(root, opts);
  if (name == "report") return cmd_report(root, opts);
  throw ConfigError("unknown subcommand '" + name + "'");
}

}  // namespace mnar
