#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace lorascape::cli {

/// Bad or inconsistent configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunOptions {
  std::string experiment;
  std::string config_path;
  std::string outdir = "out";
  unsigned jobs = 1;
  std::optional<std::int64_t> seed;
};

struct RunOutcome {
  /// <outdir>/<experiment>/<config-hash>
  std::string directory;
  nlohmann::json report;
};

/// Parses the TOML config, runs the experiment and writes config.toml,
/// trajectory.csv, report.json (plus experiment-specific CSVs).
RunOutcome run_experiment(const RunOptions& opts);

}  // namespace lorascape::cli
