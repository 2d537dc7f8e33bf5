#include "qadam/distributed.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <fstream>
#include <future>
#include <random>

#include "qadam/errors.hpp"
#include "qadam/wire.hpp"

namespace qadam {

namespace {

// Upper bound on dim * steps * workers for recorded snapshots.
constexpr std::uint64_t kMaxSnapshotValues = 4'000'000;

double l1_norm(const Tensor& t) { return norm(t, NormKind::l1); }
double l2_norm(const Tensor& t) { return norm(t, NormKind::l2); }

std::vector<std::uint8_t> frame_of(const Packet& p) {
  if (const auto* q = std::get_if<QuantizedTensor>(&p)) return wire::encode(*q);
  // Full-precision payloads are logged as raw little-endian binary64.
  const auto& t = std::get<Tensor>(p);
  std::vector<std::uint8_t> out;
  out.reserve(8 * t.size());
  for (double v : t) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

void log_message(const std::optional<std::filesystem::path>& dir, std::uint64_t round,
                 std::optional<std::uint32_t> worker, const Packet& p) {
  if (!dir) return;
  const auto path = *dir / message_file_name(round, worker, p);
  std::ofstream out(path, std::ios::binary);
  const auto bytes = frame_of(p);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write message log " + path.string());
}

// Server-side metrics for round t, shared by both runners.
RoundRecord server_metrics(const Problem& problem, std::uint64_t round, const Tensor& x, const Tensor& x_hat,
                           bool weights_exact) {
  RoundRecord r;
  r.round = round;
  r.loss = problem.loss(x_hat);
  r.grad_norm = l2_norm(problem.full_gradient(x_hat));
  if (weights_exact) {
    r.loss_x = r.loss;
    r.grad_norm_x = r.grad_norm;
  } else {
    r.loss_x = problem.loss(x);
    r.grad_norm_x = l2_norm(problem.full_gradient(x));
  }
  r.x_norm = l2_norm(x);
  if (r.x_norm > 0.0) r.weight_contraction = contraction_factor(x, x_hat);
  return r;
}

void finish_trace(Trace& trace, const Problem& problem, const Tensor& x_final, const Quantizer& qx,
                  std::chrono::steady_clock::time_point start) {
  summarize_rounds(trace);
  auto& s = trace.summary;
  const Tensor x_hat = qx.apply(x_final);
  s.final_loss = problem.loss(x_final);
  s.final_grad_norm = l2_norm(problem.full_gradient(x_final));
  s.final_loss_hat = problem.loss(x_hat);
  s.final_grad_norm_hat = l2_norm(problem.full_gradient(x_hat));
  s.best_loss = std::min(s.best_loss, s.final_loss_hat);
  s.max_x_norm = std::max(s.max_x_norm, l2_norm(x_final));
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

TraceMeta make_meta(const SimulationConfig& c, const Tensor& x0) {
  TraceMeta m;
  m.problem = c.problem->name();
  m.dim = c.problem->dim();
  m.workers = c.workers;
  m.steps = c.steps;
  m.h = c.h;
  m.kg = c.qg.describe();
  m.kx = c.qx.describe();
  m.error_feedback = c.error_feedback;
  m.seed = c.seed;
  m.bounds = c.problem->bounds();
  m.initial_loss = c.problem->loss(x0);
  return m;
}

std::vector<std::uint64_t> seeds_for(const SimulationConfig& c) {
  return c.worker_seeds.empty() ? derive_worker_seeds(c.seed, c.workers) : c.worker_seeds;
}

}  // namespace

std::string message_file_name(std::uint64_t round, std::optional<std::uint32_t> worker, const Packet& p) {
  const char* ext = std::holds_alternative<QuantizedTensor>(p) ? ".qt" : ".f64";
  std::string name = "r" + std::to_string(round);
  name += worker ? "_w" + std::to_string(*worker) : std::string("_broadcast");
  return name + ext;
}

WorkerRoundResult worker_round(const WorkerState& w, const Broadcast& broadcast, const Problem& problem,
                               const Hyperparams& h) {
  if (broadcast.round != w.opt.t) {
    throw ProtocolError("worker " + std::to_string(w.id) + " expected round " + std::to_string(w.opt.t) +
                        ", got broadcast for round " + std::to_string(broadcast.round));
  }
  const Tensor x_hat = unpack(broadcast.payload);
  if (x_hat.size() != problem.dim() || x_hat.size() != w.opt.m.size()) {
    throw CorruptionError("broadcast length " + std::to_string(x_hat.size()) + " does not match model size " +
                          std::to_string(problem.dim()));
  }

  WorkerRoundResult out{w, {}, {}, {}, {}};
  const Tensor g = problem.stochastic_gradient(x_hat, out.state.stream);
  WorkerUpdate u = worker_update(w.opt, g, h, w.qg, w.error_feedback);

  out.record.delta_norm = l2_norm(u.delta);
  out.record.err_norm = l2_norm(u.residual_in);
  out.record.next_err_norm = l2_norm(u.state.e);
  out.record.contraction = u.contraction;
  out.record.grad_norm = l2_norm(g);
  out.record.v_l1 = l1_norm(u.state.v);
  out.state.opt = std::move(u.state);
  out.report = Report{w.id, broadcast.round, std::move(u.message)};
  out.delta = std::move(u.delta);
  out.residual_in = std::move(u.residual_in);
  return out;
}

Broadcast make_broadcast(const ServerState& s) { return Broadcast{s.round, s.qx.encode(s.x)}; }

ServerRoundResult server_round(const ServerState& s, std::span<const Report> reports, std::size_t workers) {
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (reports.size() != workers) {
    throw ProtocolError("expected " + std::to_string(workers) + " reports, got " + std::to_string(reports.size()));
  }
  std::vector<const Report*> ordered(workers, nullptr);
  for (const auto& r : reports) {
    if (r.worker_id >= workers) throw ProtocolError("report from unknown worker " + std::to_string(r.worker_id));
    if (ordered[r.worker_id]) throw ProtocolError("duplicate report from worker " + std::to_string(r.worker_id));
    if (r.round != s.round) {
      throw ProtocolError("report from worker " + std::to_string(r.worker_id) + " is for round " +
                          std::to_string(r.round) + ", server is at round " + std::to_string(s.round));
    }
    if (packet_length(r.payload) != s.x.size()) {
      throw CorruptionError("report from worker " + std::to_string(r.worker_id) + " has length " +
                            std::to_string(packet_length(r.payload)) + ", expected " + std::to_string(s.x.size()));
    }
    ordered[r.worker_id] = &r;
  }

  std::vector<double> acc(s.x.size(), 0.0);
  for (const Report* r : ordered) {
    const Tensor d = unpack(r->payload);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
  }
  const double n = static_cast<double>(workers);
  std::vector<double> x(s.x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = s.x[i] - acc[i] / n;

  ServerRoundResult out{ServerState{Tensor(std::move(x)), s.round + 1, s.qx}, {}};
  out.broadcast = make_broadcast(out.state);
  return out;
}

std::vector<std::uint64_t> derive_worker_seeds(std::uint64_t base_seed, std::size_t workers) {
  std::vector<std::uint64_t> seeds(workers);
  for (std::size_t i = 0; i < workers; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(base_seed), static_cast<std::uint32_t>(base_seed >> 32),
                      static_cast<std::uint32_t>(i), 0x51a7u};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    seeds[i] = (static_cast<std::uint64_t>(words[1]) << 32) | words[0];
  }
  return seeds;
}

void SimulationConfig::validate() const {
  if (!problem) throw ConfigError("problem must be set");
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (steps == 0) throw ConfigError("steps must be >= 1");
  h.validate();
  if (!worker_seeds.empty() && worker_seeds.size() != workers) {
    throw ConfigError("seeds: need one seed per worker (" + std::to_string(workers) + "), got " +
                      std::to_string(worker_seeds.size()));
  }
  if (initial_point && initial_point->size() != problem->dim()) {
    throw ConfigError("initial point length does not match problem dim");
  }
  if (snapshots) {
    const double values = static_cast<double>(problem->dim()) * static_cast<double>(steps) *
                          static_cast<double>(workers);
    if (values > static_cast<double>(kMaxSnapshotValues)) {
      throw ConfigError("snapshots: dim * steps * workers must not exceed " + std::to_string(kMaxSnapshotValues));
    }
  }
}

Trace run_synchronous(const SimulationConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const Problem& problem = *config.problem;
  const std::size_t d = problem.dim();
  const Tensor x0 = config.initial_point.value_or(problem.initial_point());

  if (config.message_log_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*config.message_log_dir, ec);
    if (ec) throw IoError("cannot create message log directory " + config.message_log_dir->string());
  }

  const auto seeds = seeds_for(config);
  std::vector<WorkerState> workers;
  workers.reserve(config.workers);
  for (std::size_t i = 0; i < config.workers; ++i) {
    workers.push_back(WorkerState{static_cast<std::uint32_t>(i), OptimizerState::zeros(d), config.qg,
                                  GradientStream(seeds[i]), config.error_feedback});
  }

  ServerState server{x0, 1, config.qx};
  Broadcast broadcast = make_broadcast(server);

  Trace trace;
  trace.meta = make_meta(config, x0);
  if (config.snapshots) trace.snapshots.emplace();
  trace.rounds.reserve(config.steps);

  std::uint64_t cum_bits = 0;
  for (std::uint64_t t = 1; t <= config.steps; ++t) {
    const Tensor x_hat = unpack(broadcast.payload);
    RoundRecord rec = server_metrics(problem, t, server.x, x_hat, config.qx.is_identity());
    const auto sched = schedule_at(config.h, t);
    rec.alpha_t = sched.alpha_t;
    rec.theta_t = sched.theta_t;
    log_message(config.message_log_dir, t, std::nullopt, broadcast.payload);

    std::vector<WorkerRoundResult> results;
    results.reserve(workers.size());
    if (config.parallel && workers.size() > 1) {
      std::vector<std::future<WorkerRoundResult>> pending;
      for (const auto& w : workers) {
        pending.push_back(std::async(std::launch::async, [&config, &broadcast, &problem, &w] {
          return worker_round(w, broadcast, problem, config.h);
        }));
      }
      for (auto& f : pending) results.push_back(f.get());
    } else {
      for (const auto& w : workers) results.push_back(worker_round(w, broadcast, problem, config.h));
    }

    std::vector<Report> reports;
    reports.reserve(results.size());
    rec.bits = wire::packet_bits(broadcast.payload);
    for (auto& r : results) {
      rec.bits += wire::packet_bits(r.report.payload);
      log_message(config.message_log_dir, t, r.report.worker_id, r.report.payload);
      rec.workers.push_back(r.record);
      reports.push_back(r.report);
    }
    cum_bits += rec.bits;
    rec.cum_bits = cum_bits;

    if (trace.snapshots) {
      RoundSnapshot snap{server.x, x_hat, {}, {}, {}, {}};
      for (const auto& r : results) {
        snap.m.push_back(r.state.opt.m);
        snap.v.push_back(r.state.opt.v);
        snap.e.push_back(r.residual_in);
        snap.delta.push_back(r.delta);
      }
      trace.snapshots->rounds.push_back(std::move(snap));
    }

    for (std::size_t i = 0; i < workers.size(); ++i) workers[i] = std::move(results[i].state);
    auto next = server_round(server, reports, config.workers);
    server = std::move(next.state);
    broadcast = std::move(next.broadcast);
    trace.rounds.push_back(std::move(rec));
  }

  if (trace.snapshots) {
    trace.snapshots->final_x = server.x;
    for (const auto& w : workers) trace.snapshots->final_e.push_back(w.opt.e);
  }
  finish_trace(trace, problem, server.x, config.qx, start);
  return trace;
}

Trace run_single_machine(const SimulationConfig& config) {
  SimulationConfig single = config;
  single.workers = 1;
  if (single.worker_seeds.size() > 1) single.worker_seeds.resize(1);
  single.validate();
  const auto start = std::chrono::steady_clock::now();
  const Problem& problem = *single.problem;
  const std::size_t d = problem.dim();
  Tensor x = single.initial_point.value_or(problem.initial_point());

  Trace trace;
  trace.meta = make_meta(single, x);
  if (single.snapshots) trace.snapshots.emplace();

  GradientStream stream(seeds_for(single).front());
  OptimizerState state = OptimizerState::zeros(d);
  std::uint64_t cum_bits = 0;
  for (std::uint64_t t = 1; t <= single.steps; ++t) {
    const Packet weights = single.qx.encode(x);
    const Tensor x_hat = unpack(weights);
    RoundRecord rec = server_metrics(problem, t, x, x_hat, single.qx.is_identity());
    const auto [alpha_t, theta_t] = schedule_at(single.h, t);
    rec.alpha_t = alpha_t;
    rec.theta_t = theta_t;

    const Tensor g = problem.stochastic_gradient(x_hat, stream);
    StepResult r = step(state, x, g, single.h, single.qg, single.error_feedback);

    WorkerRecord w;
    w.delta_norm = l2_norm(r.output.delta);
    w.err_norm = l2_norm(state.e);
    w.next_err_norm = r.output.new_error_norm;
    w.contraction = r.output.contraction;
    w.grad_norm = l2_norm(g);
    w.v_l1 = l1_norm(r.state.v);
    rec.workers.push_back(w);
    rec.bits = wire::packet_bits(weights) + r.output.bits_sent;
    cum_bits += rec.bits;
    rec.cum_bits = cum_bits;

    if (trace.snapshots) {
      trace.snapshots->rounds.push_back(RoundSnapshot{x, x_hat, {r.state.m}, {r.state.v}, {state.e}, {r.output.delta}});
    }
    x = std::move(r.x);
    state = std::move(r.state);
    trace.rounds.push_back(std::move(rec));
  }
  if (trace.snapshots) {
    trace.snapshots->final_x = x;
    trace.snapshots->final_e = {state.e};
  }
  finish_trace(trace, problem, x, single.qx, start);
  return trace;
}

}  // namespace qadam
