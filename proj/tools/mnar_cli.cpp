#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mnar/app.hpp"

namespace {

struct SubcommandArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
};

const std::map<std::string, std::string> kDescriptions{
    {"generate", "Generate a synthetic MNAR dataset with a MAR test split"},
    {"estimate", "Evaluate one estimator on given error, propensity and mask matrices"},
    {"analyze", "Closed-form bias, variance and tail bounds per estimator family"},
    {"alpha", "Optimal per-cell alpha over a propensity grid"},
    {"mc-verify", "Monte Carlo check of an estimator against its closed form"},
    {"train", "Train a matrix-factorization model with an estimator loss"},
    {"evaluate", "AUC and NDCG@k of a checkpoint on the test split"},
    {"sweep", "Shaping function by weight-ratio grid of repeated experiments"},
    {"report", "h_B, h_V and objective surfaces over (p, alpha)"},
};

void print_error(const std::string& kind, const std::string& message) {
  mnar::Json err;
  err["error"] = kind;
  err["message"] = message;
  std::cerr << err.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimator analysis and training workbench for missing-not-at-random data"};
  app.require_subcommand(1);
  std::map<std::string, SubcommandArgs> args;
  for (const auto& name : mnar::subcommand_names()) {
    auto& a = args[name];
    CLI::App* sub = app.add_subcommand(name, kDescriptions.at(name));
    sub->add_option("--config", a.config, "JSON config file");
    sub->add_option("--seed", a.seed, "Random seed (overrides the config)");
    sub->add_option("--out", a.out, "Output directory (overrides config and MNAR_OUT)");
    sub->add_option("--threads", a.threads, "Worker threads (overrides config and MNAR_THREADS)")
        ->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const SubcommandArgs& a = args.at(name);
  try {
    mnar::Json config = mnar::Json::object();
    if (!a.config.empty()) {
      try {
        config = mnar::Json::parse(mnar::read_text_file(a.config));
      } catch (const mnar::Json::parse_error& e) {
        throw mnar::ConfigError(a.config + ": " + e.what());
      }
    }
    const mnar::RunOutcome outcome = mnar::run_subcommand(name, config, {a.seed, a.out, a.threads});
    mnar::Json summary = outcome.summary;
    if (summary.contains("config")) summary.erase("config");
    summary["artifacts"] = outcome.artifacts;
    std::cout << summary.dump(2) << "\n";
  } catch (const mnar::IoError& e) {
    print_error(e.kind(), e.what());
    return 2;
  } catch (const mnar::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const mnar::Json::exception& e) {
    print_error("config", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
