#ifndef MNAR_IO_HPP_
#define MNAR_IO_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mnar/analytics.hpp"
#include "mnar/core.hpp"
#include "mnar/metrics.hpp"
#include "mnar/simulation.hpp"
#include "mnar/training.hpp"

namespace mnar {

using Json = nlohmann::ordered_json;

enum class IngestFormat { triples, dense_ascii };

IngestFormat ingest_format_from_name(const std::string& name);

struct IngestOptions {
  IngestFormat format = IngestFormat::triples;
  std::optional<double> binarize_threshold;
  bool remap_ids = false;
};

struct IngestResult {
  LabeledMatrixd labels;                    // unobserved cells hold 0
  ObservationMask mask;                     // training (MNAR) cells
  std::optional<ObservationMask> test_mask;  // cells tagged test / mar
  std::size_t duplicates = 0;
  std::vector<std::string> user_ids;  // filled when remapping
  std::vector<std::string> item_ids;
};

/**
 * triples:      "user<TAB>item<TAB>rating[<TAB>split]" per line; blank lines and lines
 *               starting with '#' are skipped. Split tags train|mnar and test|mar.
 * dense_ascii:  whitespace-separated matrix; 0 means unobserved.
 * Ratings strictly above the threshold binarize to 1. Duplicate cells keep the last
 * line. Malformed input raises ValidationError naming the line; unreadable files IoError.
 */
IngestResult ingest(const std::string& path, const IngestOptions& opts);
IngestResult ingest_stream(std::istream& in, const IngestOptions& opts, const std::string& source = "<stream>");

/// 64-bit FNV-1a over the bytes of `text`, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// Floats for CSV output: 6 significant digits.
std::string format_float(double x);

/// Nested arrays, one inner array per row.
Json matrix_to_json(const RowMajorMatrix<double>& m);
RowMajorMatrix<double> matrix_from_json(const Json& j, const std::string& what);
Json mask_to_json(const ObservationMask& mask);
ObservationMask mask_from_json(const Json& j, const std::string& what);

Json model_to_json(const MFModel& model);
MFModel model_from_json(const Json& j);

// Report serialization; field names follow the struct members.
Json to_json(const BiasVarianceReport<double>& report);
Json to_json(const BoundReport& report);
Json to_json(const MonteCarloResult& result);
Json to_json(const EvalResult& result);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Throws ConfigError naming the first key of `obj` outside `allowed`.
void require_known_keys(const Json& obj, const std::vector<std::string>& allowed, const std::string& where);

}  // namespace mnar

#endif  // MNAR_IO_HPP_
