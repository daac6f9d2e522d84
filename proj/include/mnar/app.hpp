#ifndef MNAR_APP_HPP_
#define MNAR_APP_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mnar/io.hpp"

namespace mnar {

/// Command-line overrides. Precedence: flag, then MNAR_OUT / MNAR_THREADS, then config.
struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
};

struct RunOutcome {
  std::vector<std::string> artifacts;  // paths written
  Json summary;                        // the main JSON body, also written to disk
};

const std::vector<std::string>& subcommand_names();

/// Parses `config` for subcommand `name`, runs it and writes its artifacts under the
/// output directory. Unknown config keys raise ConfigError.
RunOutcome run_subcommand(const std::string& name, const Json& config, const RunOptions& opts = {});

/// Hash of a resolved config as embedded in every artifact.
std::string config_hash(const Json& resolved);

}  // namespace mnar

#endif  // MNAR_APP_HPP_
