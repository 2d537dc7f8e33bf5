#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "qadam/optimizer.hpp"
#include "qadam/problems.hpp"
#include "qadam/quantize.hpp"
#include "qadam/trace.hpp"

namespace qadam {

// Server to workers: Q_x(x_t), tagged with round t.
struct Broadcast {
  std::uint64_t round = 0;
  Packet payload;
};

// Worker to server: Q_g(Delta_t + e_t).
struct Report {
  std::uint32_t worker_id = 0;
  std::uint64_t round = 0;
  Packet payload;
};

struct ServerState {
  Tensor x;  // kept at full precision
  std::uint64_t round = 1;
  Quantizer qx;
};

struct WorkerState {
  std::uint32_t id = 0;
  OptimizerState opt;  // opt.t is the round the worker expects next
  Quantizer qg;
  GradientStream stream;
  bool error_feedback = true;
};

struct WorkerRoundResult {
  WorkerState state;
  Report report;
  WorkerRecord record;
  Tensor delta;
  Tensor residual_in;
};

// Receive x_hat_t, sample g there, update moments and send the quantized step.
// ProtocolError on round mismatch, CorruptionError on length mismatch.
WorkerRoundResult worker_round(const WorkerState& w, const Broadcast& broadcast, const Problem& problem,
                               const Hyperparams& h);

Broadcast make_broadcast(const ServerState& s);

struct ServerRoundResult {
  ServerState state;
  Broadcast broadcast;  // Q_x(x_{t+1}) for the next round
};

// x' = x - (1/N) sum_i dequantize(report_i), summed in ascending worker id.
// ProtocolError for a wrong report count, duplicate or unknown ids, or a
// stale round tag; CorruptionError for a length mismatch.
ServerRoundResult server_round(const ServerState& s, std::span<const Report> reports, std::size_t workers);

// Deterministic per-worker stream seeds derived from one base seed.
std::vector<std::uint64_t> derive_worker_seeds(std::uint64_t base_seed, std::size_t workers);

struct SimulationConfig {
  ProblemPtr problem;
  std::size_t workers = 1;
  std::uint64_t steps = 1;
  Hyperparams h;
  Quantizer qg = Quantizer::identity(QuantizerRole::gradient);
  Quantizer qx = Quantizer::identity(QuantizerRole::weight);
  bool error_feedback = true;
  // One stream seed per worker; derived from `seed` when empty.
  std::vector<std::uint64_t> worker_seeds;
  std::uint64_t seed = 0;
  std::optional<Tensor> initial_point;
  // Record full state vectors each round; limited to dim * steps * workers <= 4e6.
  bool snapshots = false;
  // Evaluate worker rounds on separate threads. Results are identical to the
  // sequential schedule.
  bool parallel = false;
  // When set, every message is written there as one file per frame.
  std::optional<std::filesystem::path> message_log_dir;

  // ConfigError naming the offending field.
  void validate() const;
};

// T synchronous rounds of the parameter-server method.
Trace run_synchronous(const SimulationConfig& config);

// The same method on one machine through `step`: one gradient stream, no
// messages. Only the single-worker fields of the config are used.
Trace run_single_machine(const SimulationConfig& config);

// File name a logged message gets inside the log directory.
std::string message_file_name(std::uint64_t round, std::optional<std::uint32_t> worker, const Packet& p);

}  // namespace qadam
