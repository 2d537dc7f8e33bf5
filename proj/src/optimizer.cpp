#include "qadam/optimizer.hpp"

#include <charconv>
#include <cmath>

#include "qadam/errors.hpp"
#include "qadam/wire.hpp"

namespace qadam {

namespace {

std::uint64_t parse_count(const std::string& text, const std::string& what) {
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || value == 0) {
    throw ConfigError("schedule " + what + " must be a positive integer, got '" + text + "'");
  }
  return value;
}

struct ScheduleEval {
  const Hyperparams& h;
  std::uint64_t t;

  ScheduleValue operator()(const DecaySqrtT&) const {
    const double td = static_cast<double>(t);
    return {h.alpha / std::sqrt(td), 1.0 - h.theta / td};
  }
  ScheduleValue operator()(const FixedHorizon& s) const {
    const double horizon = static_cast<double>(s.horizon);
    return {h.alpha / std::sqrt(horizon), 1.0 - h.theta / horizon};
  }
  ScheduleValue operator()(const EpochHalving& s) const {
    const double td = static_cast<double>(t);
    const auto halvings = static_cast<int>(std::min<std::uint64_t>(t / s.period, 2000));
    return {std::ldexp(h.alpha, -halvings), 1.0 - h.theta / td};
  }
};

}  // namespace

std::string describe(const Schedule& s) {
  struct Visitor {
    std::string operator()(const DecaySqrtT&) const { return "decay"; }
    std::string operator()(const FixedHorizon& f) const { return "fixed:" + std::to_string(f.horizon); }
    std::string operator()(const EpochHalving& e) const { return "halving:" + std::to_string(e.period); }
  };
  return std::visit(Visitor{}, s);
}

Schedule parse_schedule(const std::string& text) {
  if (text == "decay" || text == "decay_sqrt_t") return DecaySqrtT{};
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon);
    const std::string tail = text.substr(colon + 1);
    if (head == "fixed" || head == "fixed_horizon") return FixedHorizon{parse_count(tail, "horizon")};
    if (head == "halving" || head == "epoch_halving") return EpochHalving{parse_count(tail, "period")};
  }
  throw ConfigError("schedule must be 'decay', 'fixed:<T>' or 'halving:<period>', got '" + text + "'");
}

void Hyperparams::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be > 0");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must be in [0, 1)");
  if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("theta must be in (0, 1]");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("eps must be > 0");
  if (const auto* f = std::get_if<FixedHorizon>(&schedule); f && f->horizon == 0) {
    throw ConfigError("schedule horizon must be >= 1");
  }
  if (const auto* e = std::get_if<EpochHalving>(&schedule); e && e->period == 0) {
    throw ConfigError("schedule period must be >= 1");
  }
}

ScheduleValue schedule_at(const Hyperparams& h, std::uint64_t t) {
  if (t == 0) throw ContractViolation("schedule_at: steps are numbered from 1");
  return std::visit(ScheduleEval{h, t}, h.schedule);
}

OptimizerState OptimizerState::zeros(std::size_t dim) {
  return {Tensor::zeros(dim), Tensor::zeros(dim), Tensor::zeros(dim), 1};
}

OptimizerState moments_update(const OptimizerState& state, const Tensor& g, double theta_t, double beta) {
  if (g.size() != state.m.size()) {
    throw ShapeError("gradient length " + std::to_string(g.size()) + " does not match state length " +
                     std::to_string(state.m.size()));
  }
  const std::size_t d = g.size();
  std::vector<double> m(d);
  std::vector<double> v(d);
  for (std::size_t i = 0; i < d; ++i) {
    v[i] = theta_t * state.v[i] + (1.0 - theta_t) * (g[i] * g[i]);
    m[i] = beta * state.m[i] + (1.0 - beta) * g[i];
  }
  return {Tensor(std::move(m)), Tensor(std::move(v)), state.e, state.t};
}

Tensor compute_delta(const OptimizerState& state, double alpha_t, double epsilon) {
  const std::size_t d = state.m.size();
  std::vector<double> delta(d);
  for (std::size_t i = 0; i < d; ++i) {
    delta[i] = alpha_t * state.m[i] / std::sqrt(state.v[i] + epsilon);
  }
  return Tensor(std::move(delta));
}

WorkerUpdate worker_update(const OptimizerState& state, const Tensor& g, const Hyperparams& h,
                           const Quantizer& qg, bool error_feedback) {
  if (state.t == 0) throw ContractViolation("optimizer state step counter must start at 1");
  const auto [alpha_t, theta_t] = schedule_at(h, state.t);

  WorkerUpdate out;
  out.alpha_t = alpha_t;
  out.theta_t = theta_t;
  out.state = moments_update(state, g, theta_t, h.beta);
  out.delta = compute_delta(out.state, alpha_t, h.epsilon);
  out.residual_in = state.e;

  const Tensor corrected = add(out.delta, state.e);
  out.message = qg.encode(corrected);
  out.applied = unpack(out.message);
  if (norm(corrected, NormKind::l2) > 0.0) out.contraction = contraction_factor(corrected, out.applied);

  out.state.e = error_feedback ? sub(corrected, out.applied) : Tensor::zeros(g.size());
  out.state.t = state.t + 1;
  return out;
}

StepResult step(const OptimizerState& state, const Tensor& x, const Tensor& g, const Hyperparams& h,
                const Quantizer& qg, bool error_feedback) {
  if (x.size() != g.size()) throw ShapeError("parameter and gradient lengths differ");
  WorkerUpdate u = worker_update(state, g, h, qg, error_feedback);
  StepResult r{sub(x, u.applied), std::move(u.state), {}};
  r.output.applied_update = std::move(u.applied);
  r.output.delta = std::move(u.delta);
  r.output.new_error_norm = norm(r.state.e, NormKind::l2);
  r.output.bits_sent = wire::packet_bits(u.message);
  r.output.contraction = u.contraction;
  return r;
}

}  // namespace qadam
