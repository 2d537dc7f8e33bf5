#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "qadam/quantize.hpp"
#include "qadam/tensor.hpp"

namespace qadam {

// alpha_t = alpha / sqrt(t), theta_t = 1 - theta / t.
struct DecaySqrtT {
  bool operator==(const DecaySqrtT&) const = default;
};

// Constant alpha / sqrt(T) and 1 - theta / T for a known horizon T.
struct FixedHorizon {
  std::uint64_t horizon = 1;
  bool operator==(const FixedHorizon&) const = default;
};

// alpha * 2^{-floor(t / period)}; theta_t as in DecaySqrtT.
struct EpochHalving {
  std::uint64_t period = 1;
  bool operator==(const EpochHalving&) const = default;
};

using Schedule = std::variant<DecaySqrtT, FixedHorizon, EpochHalving>;

std::string describe(const Schedule& s);
// "decay", "fixed:<T>", "halving:<period>".
Schedule parse_schedule(const std::string& text);

struct Hyperparams {
  double alpha = 0.001;
  double beta = 0.99;
  double theta = 0.999;
  double epsilon = 1e-5;
  Schedule schedule = DecaySqrtT{};

  // ConfigError naming the offending field.
  void validate() const;
};

struct ScheduleValue {
  double alpha_t;
  double theta_t;
};

ScheduleValue schedule_at(const Hyperparams& h, std::uint64_t t);

// Per-worker optimizer state. Starts at m = v = e = 0, t = 1.
struct OptimizerState {
  Tensor m;
  Tensor v;
  Tensor e;
  std::uint64_t t = 1;

  static OptimizerState zeros(std::size_t dim);
};

// v' = theta_t v + (1 - theta_t) g^2 and m' = beta m + (1 - beta) g.
// The step counter is left for the caller to advance.
OptimizerState moments_update(const OptimizerState& state, const Tensor& g, double theta_t, double beta);

// alpha_t * m / sqrt(v + epsilon).
Tensor compute_delta(const OptimizerState& state, double alpha_t, double epsilon);

// Worker half of one step: moments, delta, quantize-with-feedback.
struct WorkerUpdate {
  OptimizerState state;  // t already advanced
  Packet message;        // Q_g(delta + e)
  Tensor applied;        // unpack(message)
  Tensor delta;
  Tensor residual_in;    // e_t, the residual added before quantizing
  double alpha_t = 0.0;
  double theta_t = 0.0;
  // Empirical contraction of Q_g on delta + e_t; empty when that input is zero.
  std::optional<double> contraction;
};

WorkerUpdate worker_update(const OptimizerState& state, const Tensor& g, const Hyperparams& h,
                           const Quantizer& qg, bool error_feedback = true);

struct StepOutput {
  Tensor applied_update;
  Tensor delta;
  double new_error_norm = 0.0;
  std::uint64_t bits_sent = 0;
  std::optional<double> contraction;
};

struct StepResult {
  Tensor x;
  OptimizerState state;
  StepOutput output;
};

// One iteration of the quantized method on a single machine: the caller
// supplies g sampled at Q_x(x).
// x' = x - Q_g(delta + e); e' = delta + e - Q_g(delta + e), or 0 without feedback.
StepResult step(const OptimizerState& state, const Tensor& x, const Tensor& g, const Hyperparams& h,
                const Quantizer& qg, bool error_feedback = true);

}  // namespace qadam
