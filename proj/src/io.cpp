#include "mnar/io.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace mnar {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool skippable(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

double parse_number(const std::string& tok, const std::string& source, std::size_t line_no) {
  double v = 0.0;
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ValidationError(source + ":" + std::to_string(line_no) + ": not a finite number: '" + tok + "'");
  return v;
}

Eigen::Index parse_index(const std::string& tok, const std::string& source, std::size_t line_no) {
  long long v = 0;
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || v < 0)
    throw ValidationError(source + ":" + std::to_string(line_no) + ": id must be a non-negative integer: '" + tok +
                          "'");
  return static_cast<Eigen::Index>(v);
}

double label_of(double rating, const IngestOptions& opts) {
  if (!opts.binarize_threshold) return rating;
  return rating > *opts.binarize_threshold ? 1.0 : 0.0;
}

Role label_role(const IngestOptions& opts) {
  return opts.binarize_threshold ? Role::binary_labels : Role::generic;
}

/// Dense id assignment in order of first appearance.
class IdMap {
 public:
  Eigen::Index lookup(const std::string& key) {
    const auto [it, inserted] = index_.emplace(key, static_cast<Eigen::Index>(names_.size()));
    if (inserted) names_.push_back(key);
    return it->second;
  }
  std::vector<std::string>& names() { return names_; }

 private:
  std::unordered_map<std::string, Eigen::Index> index_;
  std::vector<std::string> names_;
};

struct Triple {
  Eigen::Index user;
  Eigen::Index item;
  double label;
  bool test;
};

IngestResult ingest_triples(std::istream& in, const IngestOptions& opts, const std::string& source) {
  IdMap users;
  IdMap items;
  std::map<std::pair<Eigen::Index, Eigen::Index>, Triple> cells;
  std::size_t duplicates = 0;
  bool any_split = false;
  Eigen::Index max_user = -1;
  Eigen::Index max_item = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skippable(line)) continue;
    const auto f = split_fields(line);
    if (f.size() != 3 && f.size() != 4)
      throw ValidationError(source + ":" + std::to_string(line_no) + ": expected 3 or 4 fields, got " +
                            std::to_string(f.size()));
    Triple t{};
    t.user = opts.remap_ids ? users.lookup(f[0]) : parse_index(f[0], source, line_no);
    t.item = opts.remap_ids ? items.lookup(f[1]) : parse_index(f[1], source, line_no);
    t.label = label_of(parse_number(f[2], source, line_no), opts);
    if (f.size() == 4) {
      any_split = true;
      if (f[3] == "test" || f[3] == "mar") {
        t.test = true;
      } else if (f[3] != "train" && f[3] != "mnar") {
        throw ValidationError(source + ":" + std::to_string(line_no) + ": unknown split tag '" + f[3] + "'");
      }
    }
    max_user = std::max(max_user, t.user);
    max_item = std::max(max_item, t.item);
    const auto [it, inserted] = cells.insert_or_assign({t.user, t.item}, t);
    if (!inserted) ++duplicates;
  }
  if (cells.empty()) throw ValidationError(source + ": no data lines");

  const Eigen::Index rows = max_user + 1;
  const Eigen::Index cols = max_item + 1;
  RowMajorMatrix<double> y = RowMajorMatrix<double>::Zero(rows, cols);
  MaskBits train = MaskBits::Zero(rows, cols);
  MaskBits test = MaskBits::Zero(rows, cols);
  for (const auto& [key, t] : cells) {
    y(t.user, t.item) = t.label;
    (t.test ? test : train)(t.user, t.item) = 1;
  }
  IngestResult out{LabeledMatrixd(std::move(y), label_role(opts)), ObservationMask(std::move(train)),
                   std::nullopt, duplicates, {}, {}};
  if (any_split) out.test_mask = ObservationMask(std::move(test));
  if (opts.remap_ids) {
    out.user_ids = std::move(users.names());
    out.item_ids = std::move(items.names());
  }
  return out;
}

IngestResult ingest_dense(std::istream& in, const IngestOptions& opts, const std::string& source) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skippable(line)) continue;
    std::vector<double> row;
    for (const auto& tok : split_fields(line)) row.push_back(parse_number(tok, source, line_no));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ValidationError(source + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(rows.front().size()) + " columns, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(source + ": no data lines");
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(rows.front().size());
  RowMajorMatrix<double> y = RowMajorMatrix<double>::Zero(r, c);
  MaskBits mask = MaskBits::Zero(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      const double v = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (v == 0.0) continue;
      mask(i, j) = 1;
      y(i, j) = label_of(v, opts);
    }
  return IngestResult{LabeledMatrixd(std::move(y), label_role(opts)), ObservationMask(std::move(mask)),
                      std::nullopt, 0, {}, {}};
}

}  // namespace

IngestFormat ingest_format_from_name(const std::string& name) {
  if (name == "triples") return IngestFormat::triples;
  if (name == "dense_ascii") return IngestFormat::dense_ascii;
  throw ConfigError("unknown ingest format '" + name + "'");
}

IngestResult ingest_stream(std::istream& in, const IngestOptions& opts, const std::string& source) {
  return opts.format == IngestFormat::triples ? ingest_triples(in, opts, source) : ingest_dense(in, opts, source);
}

IngestResult ingest(const std::string& path, const IngestOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return ingest_stream(in, opts, path);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_float(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

Json matrix_to_json(const RowMajorMatrix<double>& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

RowMajorMatrix<double> matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j.front().is_array() || j.front().empty())
    throw ConfigError(what + ": expected a non-empty array of non-empty arrays");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  RowMajorMatrix<double> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw DimensionError(what + ": row " + std::to_string(r) + " has the wrong length");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ConfigError(what + ": non-numeric entry at (" + std::to_string(r) + "," +
                                            std::to_string(c) + ")");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

Json mask_to_json(const ObservationMask& mask) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < mask.cols(); ++c) row.push_back(mask(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

ObservationMask mask_from_json(const Json& j, const std::string& what) {
  const RowMajorMatrix<double> m = matrix_from_json(j, what);
  MaskBits bits(m.rows(), m.cols());
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    const double v = m.data()[k];
    if (v != 0.0 && v != 1.0) throw DomainError(what + ": mask entries must be 0 or 1");
    bits.data()[k] = static_cast<std::uint8_t>(v);
  }
  return ObservationMask(std::move(bits));
}

Json model_to_json(const MFModel& model) {
  Json out;
  out["format"] = "mnar-mf-checkpoint";
  out["version"] = 1;
  out["rows"] = model.rows();
  out["cols"] = model.cols();
  out["k"] = model.k();
  out["user_factors"] = matrix_to_json(model.user_factors);
  out["item_factors"] = matrix_to_json(model.item_factors);
  out["user_bias"] = std::vector<double>(model.user_bias.data(), model.user_bias.data() + model.user_bias.size());
  out["item_bias"] = std::vector<double>(model.item_bias.data(), model.item_bias.data() + model.item_bias.size());
  out["global_bias"] = model.global_bias;
  return out;
}

MFModel model_from_json(const Json& j) {
  if (!j.is_object() || j.value("format", "") != "mnar-mf-checkpoint")
    throw ValidationError("not an MF checkpoint");
  if (j.value("version", 0) != 1) throw ValidationError("unsupported checkpoint version");
  MFModel m;
  m.user_factors = matrix_from_json(j.at("user_factors"), "user_factors");
  m.item_factors = matrix_from_json(j.at("item_factors"), "item_factors");
  const auto ub = j.at("user_bias").get<std::vector<double>>();
  const auto ib = j.at("item_bias").get<std::vector<double>>();
  m.user_bias = Eigen::Map<const Eigen::VectorXd>(ub.data(), static_cast<Eigen::Index>(ub.size()));
  m.item_bias = Eigen::Map<const Eigen::VectorXd>(ib.data(), static_cast<Eigen::Index>(ib.size()));
  m.global_bias = j.at("global_bias").get<double>();
  if (m.user_factors.cols() != m.item_factors.cols() || m.user_bias.size() != m.user_factors.rows() ||
      m.item_bias.size() != m.item_factors.rows())
    throw DimensionError("checkpoint parameter shapes disagree");
  if (!m.all_finite()) throw ValidationError("checkpoint holds non-finite parameters");
  return m;
}

Json to_json(const BiasVarianceReport<double>& report) {
  Json j;
  j["estimator"] = family_name(report.estimator);
  j["bias"] = report.bias;
  j["variance"] = report.variance;
  j["per_cell_bias_factor"] = matrix_to_json(report.per_cell_bias_factor);
  j["per_cell_variance_factor"] = matrix_to_json(report.per_cell_variance_factor);
  return j;
}

Json to_json(const BoundReport& report) {
  Json j;
  j["rho"] = report.rho;
  j["hypothesis_count"] = report.hypothesis_count;
  j["tail_bound"] = report.tail_bound;
  j["point_estimate"] = report.point_estimate;
  j["bias_term"] = report.bias_term;
  j["variance_term"] = report.variance_term;
  j["generalization_bound"] = report.generalization_bound;
  return j;
}

Json to_json(const MonteCarloResult& result) {
  Json j;
  j["replicas"] = result.replicas;
  j["empirical_mean"] = result.empirical_mean;
  j["empirical_variance"] = result.empirical_variance;
  j["empirical_bias"] = result.empirical_bias;
  j["standard_error"] = result.standard_error;
  j["real_loss"] = result.real_loss;
  j["empty_resamples"] = result.empty_resamples;
  j["closed_form"] = result.closed_form ? to_json(*result.closed_form) : Json(nullptr);
  return j;
}

Json to_json(const EvalResult& result) {
  Json j;
  j["auc"] = result.auc;
  j["ndcg_at_k"] = result.ndcg_at_k;
  j["k"] = result.k;
  Json per_user = Json::array();
  for (double v : result.per_user_ndcg) per_user.push_back(std::isfinite(v) ? Json(v) : Json(nullptr));
  j["per_user_ndcg"] = std::move(per_user);
  return j;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

void require_known_keys(const Json& obj, const std::vector<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(where + ": unknown key '" + key + "'");
}

}  // namespace mnar
