#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nes/embedding.hpp"
#include "nes/risk_utility.hpp"
#include "nes/swap_engine.hpp"

namespace nes::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNonConvergence = 3;

/// Every setting of a pipeline run; filled from an optional TOML config and
/// the command line, the latter taking precedence.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string provider = "stub";
  std::size_t dim = 0;  // 0: use the corpus dimension
  std::string cache_path;
  std::string endpoint;

  // ingest
  std::string input;
  std::string sentences;
  double threshold = 75.0;
  std::string rules;
  std::string output;
  std::string stats;

  // fit
  std::string corpus;
  std::string family = "PKB";
  std::size_t K = 5;
  double eps = 1e-3;
  double tol = 1e-6;
  std::size_t max_iter = 500;
  std::string model;
  std::string trace;

  // sweep, select, swap
  std::vector<double> N;
  std::vector<std::string> s_eligible;
  std::vector<std::string> roles;         // "Category=F"
  std::vector<std::string> placeholders;  // "Category=[Text]"
  std::size_t subset_size = 2;
  std::size_t max_swaps = 30;
  bool same_cluster = true;
  std::string report;
  std::string sweep_csv;
  double a = 1.0;
  double c = 0.0;
  std::optional<double> max_dr;
  std::optional<double> select_N;
  std::string release;
  std::string log;

  // eval
  std::vector<std::string> predictions;
};

/// Checks cross-field invariants of the settings a command uses; throws
/// ValidationError.
void validate(const RunConfig& config, const std::string& command);

ProviderConfig provider_config(const RunConfig& config, std::size_t corpus_d);

/// Parses "Category=Value" items.
std::map<std::string, std::string> parse_assignments(const std::vector<std::string>& items);
std::map<std::string, Role> parse_roles(const std::vector<std::string>& items);

SweepConfig sweep_config(const RunConfig& config);

/// Command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

} // namespace nes::cli
