#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qadam/distributed.hpp"
#include "qadam/optimizer.hpp"
#include "qadam/problems.hpp"
#include "qadam/trace.hpp"
#include "qadam/verify.hpp"

namespace qadam {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitVerify = 3;
inline constexpr int kExitIo = 4;

// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "QADAM_OUT_DIR";

struct ProblemSpec {
  std::string kind = "quadratic";  // quadratic | logistic | mlp
  std::size_t dim = 10;
  std::uint64_t data_seed = 0;
  // quadratic
  double condition_number = 1.0;
  std::vector<double> noise{-0.5, 0.5};
  double radius = 10.0;
  // logistic and mlp
  std::size_t samples = 500;
  std::size_t batch = 10;
  double label_noise = 0.1;
  double feature_spread = 1.0;
  std::optional<std::filesystem::path> dataset;
  // mlp; dim is the input width, the output width is 1
  std::vector<std::size_t> hidden{8};
  Activation activation = Activation::tanh;
};

struct RunConfig {
  ProblemSpec problem;
  std::size_t workers = 1;
  std::uint64_t steps = 1000;
  std::string kg = "fp";
  std::string kx = "fp";
  bool ef = true;
  Hyperparams h;
  std::uint64_t seed = 0;
  bool snapshots = false;
  bool parallel = false;
  std::optional<std::filesystem::path> out;  // output stem; no files when empty
  std::optional<std::filesystem::path> message_log;

  // ConfigError naming the offending field.
  void validate() const;
};

using ConfigMap = std::map<std::string, std::string>;

// Keys accepted in config files and as --<key> flags.
const std::vector<std::string>& config_keys();

// key = value per line, '#' starts a comment. ConfigError on malformed lines
// or unknown keys, IoError when unreadable.
ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::filesystem::path& path);

// Applies entries on top of `base`. ConfigError naming the key on bad values.
RunConfig apply_config(const ConfigMap& entries, RunConfig base = {});

// Every effective setting as key/value text, the inverse of apply_config.
ConfigMap config_to_map(const RunConfig& config);

ProblemPtr make_problem(const ProblemSpec& spec);

SimulationConfig to_simulation(const RunConfig& config, ProblemPtr problem);

// Runs and, when config.out is set, writes the trace files.
Trace run_experiment(const RunConfig& config);

// Default output stem: $QADAM_OUT_DIR/<name> or ./<name>.
std::filesystem::path default_output_stem(const std::string& name);

enum class SweepAxis { kg, kx, alpha };

SweepAxis parse_sweep_axis(const std::string& text);
std::string describe(SweepAxis axis);

struct SweepEntry {
  std::string value;
  bool ef = true;
  std::filesystem::path stem;
  TraceSummary summary;
};

// One run per value (and per EF setting when both_ef). Traces go to
// <out>_<axis><value>[_ef|_noef]; the table to <out>_sweep.csv.
std::vector<SweepEntry> run_sweep(const RunConfig& base, SweepAxis axis, const std::vector<std::string>& values,
                                  bool both_ef);

void write_sweep_table(const std::vector<SweepEntry>& entries, SweepAxis axis, const std::filesystem::path& path);

// Command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qadam
