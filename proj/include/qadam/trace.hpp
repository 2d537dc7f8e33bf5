#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qadam/optimizer.hpp"
#include "qadam/problems.hpp"
#include "qadam/tensor.hpp"

namespace qadam {

struct WorkerRecord {
  double delta_norm = 0.0;     // ||Delta_t||
  double err_norm = 0.0;       // ||e_t||, residual entering the round
  double next_err_norm = 0.0;  // ||e_{t+1}||
  std::optional<double> contraction;
  double grad_norm = 0.0;  // ||g_t|| of the stochastic sample
  double v_l1 = 0.0;       // ||v_t||_1 after the update

  bool operator==(const WorkerRecord&) const = default;
};

struct RoundRecord {
  std::uint64_t round = 0;
  double alpha_t = 0.0;
  double theta_t = 0.0;
  double loss = 0.0;       // f(x_hat_t), x_hat_t = Q_x(x_t)
  double grad_norm = 0.0;  // ||grad f(x_hat_t)||
  double loss_x = 0.0;     // f(x_t)
  double grad_norm_x = 0.0;
  double x_norm = 0.0;
  std::optional<double> weight_contraction;  // empirical delta_x of Q_x on x_t
  std::uint64_t bits = 0;                    // broadcast plus all reports this round
  std::uint64_t cum_bits = 0;
  std::vector<WorkerRecord> workers;

  double mean_delta_norm() const;
  double mean_err_norm() const;
  bool operator==(const RoundRecord&) const = default;
};

// Full state vectors per round: server x_t and x_hat_t, and per worker the
// moments after the update, the residual e_t entering the round and Delta_t.
struct RoundSnapshot {
  Tensor x;
  Tensor x_hat;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::vector<Tensor> e;
  std::vector<Tensor> delta;

  bool operator==(const RoundSnapshot&) const = default;
};

struct Snapshots {
  std::vector<RoundSnapshot> rounds;
  Tensor final_x;              // x_{T+1}
  std::vector<Tensor> final_e;  // e_{T+1} per worker

  bool operator==(const Snapshots&) const = default;
};

// Facts about the run the checks need; echoed alongside the raw config.
struct TraceMeta {
  std::string problem;
  std::size_t dim = 0;
  std::size_t workers = 1;
  std::uint64_t steps = 0;
  Hyperparams h;
  std::string kg = "fp";
  std::string kx = "fp";
  bool error_feedback = true;
  std::uint64_t seed = 0;
  ProblemBounds bounds;
  double initial_loss = 0.0;  // f(x_1)
};

struct TraceSummary {
  double final_loss = 0.0;  // f(x_{T+1})
  double final_grad_norm = 0.0;
  double final_loss_hat = 0.0;  // at Q_x(x_{T+1})
  double final_grad_norm_hat = 0.0;
  double best_loss = 0.0;
  double mean_grad_norm_sq = 0.0;  // mean over rounds of ||grad f(x_hat_t)||^2
  std::optional<double> delta_g;   // trace-minimum contraction over all workers
  std::optional<double> delta_x;
  double max_x_norm = 0.0;  // empirical D
  double max_grad_sample_norm = 0.0;
  std::uint64_t total_bits = 0;
  double wall_seconds = 0.0;
};

struct Trace {
  TraceMeta meta;
  std::map<std::string, std::string> config;  // effective config, echoed verbatim
  std::vector<RoundRecord> rounds;
  std::optional<Snapshots> snapshots;
  TraceSummary summary;
};

// Fills the summary fields derivable from rounds; final-point fields are left
// to the caller.
void summarize_rounds(Trace& trace);

// Writes <stem>.csv, <stem>.json and, when snapshots exist, <stem>.snapshots.csv.
// IoError on failure.
void write_trace(const Trace& trace, const std::filesystem::path& stem);

// Inverse of write_trace. Missing snapshot file leaves snapshots empty.
// IoError if the CSV or JSON is missing, FormatError if malformed.
Trace read_trace(const std::filesystem::path& stem);

// CSV header for a trace with the given worker count.
std::vector<std::string> trace_columns(std::size_t workers);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text);

}  // namespace qadam
