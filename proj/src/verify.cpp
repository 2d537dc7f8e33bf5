#include "qadam/verify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "qadam/errors.hpp"
#include "qadam/wire.hpp"

namespace qadam {

namespace {

constexpr std::uint64_t kMaxCut = 100'000'000;

// Tracks the worst relative slack of lhs <= rhs comparisons.
class InequalityTally {
 public:
  // Returns false on violation.
  bool add(double lhs, double rhs) {
    const double scale = std::max(std::abs(lhs), std::abs(rhs));
    const bool ok = lhs <= rhs + kRelativeSlack * scale;
    if (scale > 0.0) {
      const double rel = (rhs - lhs) / scale;
      if (!worst_ || rel < *worst_) worst_ = rel;
    }
    if (!ok) ++violations_;
    ++count_;
    return ok;
  }
  std::size_t violations() const { return violations_; }
  std::size_t count() const { return count_; }
  double margin() const { return worst_.value_or(0.0); }

 private:
  std::optional<double> worst_;
  std::size_t violations_ = 0;
  std::size_t count_ = 0;
};

CheckReport finish(std::string name, const InequalityTally& tally, std::string detail) {
  CheckReport r;
  r.name = std::move(name);
  r.status = tally.violations() == 0 ? CheckStatus::pass : CheckStatus::fail;
  r.margin = tally.margin();
  std::ostringstream os;
  os << detail << (detail.empty() ? "" : "; ") << tally.count() << " comparisons, " << tally.violations()
     << " violations";
  r.detail = os.str();
  return r;
}

CheckReport not_applicable(std::string name, std::string why) {
  return CheckReport{std::move(name), CheckStatus::not_applicable, 0.0, std::move(why)};
}

std::optional<double> trace_delta_g(const Trace& trace) {
  std::optional<double> d;
  for (const auto& r : trace.rounds) {
    for (const auto& w : r.workers) {
      if (w.contraction) d = std::min(d.value_or(1.0), *w.contraction);
    }
  }
  return d;
}

double resolve_delta(const Trace& trace, std::optional<double> delta_g) {
  const double delta = delta_g ? *delta_g : trace_delta_g(trace).value_or(1.0);
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw ConfigError("delta_g must be in (0, 1], got " + format_double(delta));
  }
  return delta;
}

CheckReport residual_sum_impl(const Trace& trace, std::optional<double> delta_g, bool next_residual, std::string name) {
  if (!trace.meta.error_feedback) return not_applicable(std::move(name), "error feedback disabled");
  const double delta = resolve_delta(trace, delta_g);
  const double c = (1.0 - delta) / delta;
  InequalityTally tally;
  for (std::size_t w = 0; w < trace.meta.workers; ++w) {
    double lhs = 0.0;
    double sq = 0.0;
    for (const auto& r : trace.rounds) {
      const auto& wr = r.workers.at(w);
      lhs += (next_residual ? wr.next_err_norm : wr.err_norm) * wr.delta_norm;
      sq += wr.delta_norm * wr.delta_norm;
      tally.add(lhs, c * sq);
    }
  }
  return finish(std::move(name), tally, "delta_g=" + format_double(delta));
}

double harmonic(std::uint64_t T) {
  double h = 0.0;
  for (std::uint64_t t = T; t >= 1; --t) h += 1.0 / static_cast<double>(t);
  return h;
}

std::uint64_t message_bits(const std::string& spec, std::size_t dim, QuantizerRole role) {
  const Quantizer q = Quantizer::parse(spec, role);
  if (q.is_identity()) return 64 * static_cast<std::uint64_t>(dim);
  return wire::bits_for_message(dim, q.bits());
}

}  // namespace

double default_theta_prime(double beta) { return 0.5 * (1.0 + beta * beta); }

AnalysisConstants compute_constants(const Hyperparams& h, const ConstantInputs& in, std::optional<double> theta_prime) {
  h.validate();
  AnalysisConstants k;
  k.h = h;
  k.inputs = in;
  const double beta = h.beta;
  const double tp = theta_prime.value_or(default_theta_prime(beta));
  if (!(tp > beta * beta && tp < 1.0)) {
    throw ConfigError("theta_prime must be in (beta^2, 1), got " + format_double(tp));
  }
  if (!(tp > beta)) {
    throw ConfigError("theta_prime must exceed beta so that gamma = beta/theta_prime < 1, got " + format_double(tp));
  }
  if (!(in.delta_g > 0.0 && in.delta_g <= 1.0)) throw ConfigError("delta_g must be in (0, 1]");
  if (!(in.delta_x > 0.0 && in.delta_x <= 1.0)) throw ConfigError("delta_x must be in (0, 1]");
  if (!(in.G >= 0.0 && in.L >= 0.0 && in.D >= 0.0)) throw ConfigError("G, L and D must be non-negative");

  k.theta_prime = tp;
  k.gamma = beta / tp;
  const double one_minus_gamma = (tp - beta) / tp;
  const double one_minus_sqrt_gamma = one_minus_gamma / (1.0 + std::sqrt(k.gamma));

  k.theta_1 = schedule_at(h, 1).theta_t;
  if (!(k.theta_1 > 0.0)) throw ConfigError("theta_1 must be > 0 (theta < 1 required for the analysis)");

  // theta_j is non-decreasing in j for every schedule, so the indices with
  // theta_j < theta' form a prefix.
  if (const auto* f = std::get_if<FixedHorizon>(&h.schedule)) {
    k.n_cut = k.theta_1 < tp ? f->horizon : 0;
  } else {
    const double guess = std::ceil(h.theta / (1.0 - tp)) - 1.0;
    if (guess > static_cast<double>(kMaxCut)) throw ConfigError("theta_prime too close to 1: cut index too large");
    std::uint64_t n = guess > 0.0 ? static_cast<std::uint64_t>(guess) : 0;
    while (n > 0 && schedule_at(h, n).theta_t >= tp) --n;
    while (schedule_at(h, n + 1).theta_t < tp) ++n;
    k.n_cut = n;
  }
  if (k.n_cut > kMaxCut) throw ConfigError("cut index too large");
  double log_c1 = 0.0;
  const double log_tp = std::log(tp);
  for (std::uint64_t j = 1; j <= k.n_cut; ++j) log_c1 += std::log(schedule_at(h, j).theta_t) - log_tp;
  k.log_c1 = log_c1;
  k.c1 = std::exp(log_c1);

  const double a = h.alpha;
  const double eps = h.epsilon;
  const double G = in.G;
  const double L = in.L;
  const double d = static_cast<double>(in.dim);
  const double omb = 1.0 - beta;
  const double sqrt_theta = std::sqrt(h.theta);
  const double q = std::exp(std::log(k.theta_1) + log_c1 + std::log(one_minus_gamma));  // theta_1 C1 (1-gamma)
  const double g3 = G * G * G;
  const double root_g_eps = std::sqrt(G * G + eps);

  const double inner = beta / (omb * std::sqrt(q)) + 1.0;
  k.c2 = 5.0 * a * g3 * omb / (2.0 * eps * sqrt_theta) * inner * inner + 5.0 * a * g3 / (2.0 * eps * sqrt_theta) +
         5.0 * beta * beta * a * d * std::sqrt(eps) / (2.0 * sqrt_theta * omb * q) +
         5.0 * a * root_g_eps * G * G * beta * beta / (2.0 * omb * sqrt_theta * q * eps) +
         5.0 * a * root_g_eps * beta * beta * d / (2.0 * omb * sqrt_theta * q);

  const double root = std::sqrt(G * G + eps * d);
  const double sqrt_c1 = std::exp(0.5 * log_c1);
  const double denom = sqrt_c1 * one_minus_sqrt_gamma;
  const double ef_term = L * (2.0 - in.delta_g) * G * G * a * a / (eps * in.delta_g);
  const double lead = 2.0 * root / (omb * a);

  k.c3 = (ef_term + k.c2 * h.theta) / denom;
  k.c = lead * in.f_gap;
  k.c_prime = lead * k.c3;
  k.c5 = k.c;
  k.c6 = lead / denom * (L * G * G * a * a / eps + k.c2 * h.theta);
  k.c7 = 8.0 * (1.0 - in.delta_x) * root * L * in.D * G / (omb * std::sqrt(eps) * sqrt_c1 * one_minus_sqrt_gamma);
  k.c8 = k.c;
  k.c9 = lead / denom * (ef_term + k.c2 * h.theta);
  k.c10 = k.c7;
  return k;
}

std::optional<double> theoretical_bound(const AnalysisConstants& k, std::uint64_t T, Theorem which) {
  if (T == 0) throw ContractViolation("theoretical_bound: T must be >= 1");
  double lead = 0.0;
  double rate = 0.0;
  double floor = 0.0;
  switch (which) {
    case Theorem::gradients:
      lead = k.c;
      rate = k.c_prime;
      break;
    case Theorem::weights:
      lead = k.c5;
      rate = k.c6;
      floor = k.c7;
      break;
    case Theorem::both:
      lead = k.c8;
      rate = k.c9;
      floor = k.c10;
      break;
  }
  const double sqrt_t = std::sqrt(static_cast<double>(T));
  if (std::holds_alternative<DecaySqrtT>(k.h.schedule)) return (lead + rate * harmonic(T)) / sqrt_t + floor;
  if (std::holds_alternative<FixedHorizon>(k.h.schedule)) return (lead + rate) / sqrt_t + floor / 2.0;
  return std::nullopt;
}

std::string describe(Theorem which) {
  switch (which) {
    case Theorem::gradients:
      return "quantized-gradient";
    case Theorem::weights:
      return "quantized-weight";
    case Theorem::both:
      return "fully-quantized";
  }
  return "?";
}

std::string describe(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass:
      return "pass";
    case CheckStatus::fail:
      return "fail";
    case CheckStatus::not_applicable:
      return "n/a";
  }
  return "?";
}

CheckReport check_ef_identity(const Trace& trace) {
  const std::string name = "ef_identity";
  if (!trace.meta.error_feedback) return not_applicable(name, "error feedback disabled (residual discarded)");
  if (!trace.snapshots) return not_applicable(name, "no snapshots recorded");
  const auto& s = *trace.snapshots;
  const std::size_t n = trace.meta.workers;
  const double nd = static_cast<double>(n);
  double worst = 0.0;
  std::uint64_t worst_round = 0;
  for (std::size_t t = 0; t < s.rounds.size(); ++t) {
    const auto& cur = s.rounds[t];
    const Tensor& x_next = t + 1 < s.rounds.size() ? s.rounds[t + 1].x : s.final_x;
    const std::vector<Tensor>& e_next = t + 1 < s.rounds.size() ? s.rounds[t + 1].e : s.final_e;
    const std::size_t d = cur.x.size();
    if (x_next.size() != d || e_next.size() != n || cur.e.size() != n || cur.delta.size() != n) {
      throw FormatError("snapshot shapes inconsistent at round " + std::to_string(t + 1));
    }
    for (std::size_t i = 0; i < d; ++i) {
      double e_cur = 0.0;
      double e_nxt = 0.0;
      double dlt = 0.0;
      for (std::size_t w = 0; w < n; ++w) {
        e_cur += cur.e[w][i];
        e_nxt += e_next[w][i];
        dlt += cur.delta[w][i];
      }
      const double v = std::abs((x_next[i] - e_nxt / nd) - (cur.x[i] - e_cur / nd) + dlt / nd);
      if (v > worst) {
        worst = v;
        worst_round = t + 1;
      }
    }
  }
  CheckReport r;
  r.name = name;
  r.status = worst <= kEfIdentityTolerance ? CheckStatus::pass : CheckStatus::fail;
  r.margin = kEfIdentityTolerance - worst;
  r.detail = "max violation " + format_double(worst) + (worst_round ? " at round " + std::to_string(worst_round) : "");
  return r;
}

CheckReport check_residual_sum(const Trace& trace, std::optional<double> delta_g) {
  return residual_sum_impl(trace, delta_g, false, "residual_sum");
}

CheckReport check_next_residual_sum(const Trace& trace, std::optional<double> delta_g) {
  return residual_sum_impl(trace, delta_g, true, "next_residual_sum");
}

CheckReport check_moment_bound(const Trace& trace, const AnalysisConstants& k) {
  const std::string name = "moment_bound";
  if (!trace.snapshots) return not_applicable(name, "no snapshots recorded");
  const auto& s = *trace.snapshots;
  const double log_one_minus_gamma = std::log((k.theta_prime - k.h.beta) / k.theta_prime);
  std::size_t violations = 0;
  std::size_t count = 0;
  std::optional<double> worst;
  for (std::size_t t = 0; t < s.rounds.size(); ++t) {
    const double theta_t = trace.rounds.at(t).theta_t;
    const double log_k = -k.log_c1 - log_one_minus_gamma - std::log1p(-theta_t);
    const auto& snap = s.rounds[t];
    for (std::size_t w = 0; w < snap.m.size(); ++w) {
      for (std::size_t i = 0; i < snap.m[w].size(); ++i) {
        const double m = snap.m[w][i];
        const double v = snap.v[w][i];
        ++count;
        if (m == 0.0) continue;
        if (!(v > 0.0)) {
          ++violations;
          continue;
        }
        const double lhs = 2.0 * std::log(std::abs(m));
        const double rhs = std::log(v) + log_k;
        const double slack = rhs - lhs;
        if (!worst || slack < *worst) worst = slack;
        if (slack < -kRelativeSlack) ++violations;
      }
    }
  }
  CheckReport r;
  r.name = name;
  r.status = violations == 0 ? CheckStatus::pass : CheckStatus::fail;
  r.margin = worst.value_or(0.0);
  r.detail = "log C1=" + format_double(k.log_c1) + ", gamma=" + format_double(k.gamma) + "; " +
             std::to_string(count) + " coordinates, " + std::to_string(violations) + " violations (margin in log space)";
  return r;
}

CheckReport check_sum_bounds(const Trace& trace, std::optional<double> G) {
  double g = 0.0;
  if (G) {
    g = *G;
  } else {
    for (const auto& r : trace.rounds) {
      for (const auto& w : r.workers) g = std::max(g, w.grad_norm);
    }
  }
  const double eps = trace.meta.h.epsilon;
  const bool decay = std::holds_alternative<DecaySqrtT>(trace.meta.h.schedule);
  InequalityTally tally;
  for (std::size_t w = 0; w < trace.meta.workers; ++w) {
    double sum_sq = 0.0;
    double sum = 0.0;
    double alpha_sq = 0.0;
    double alpha_sum = 0.0;
    for (const auto& r : trace.rounds) {
      const auto& wr = r.workers.at(w);
      tally.add(wr.v_l1, g * g);
      tally.add(wr.delta_norm * wr.delta_norm, g * g * r.alpha_t * r.alpha_t / eps);
      sum_sq += wr.delta_norm * wr.delta_norm;
      sum += wr.delta_norm;
      alpha_sq += r.alpha_t * r.alpha_t;
      alpha_sum += r.alpha_t;
      tally.add(sum_sq, g * g / eps * alpha_sq);
      tally.add(sum, g / std::sqrt(eps) * alpha_sum);
      if (decay) {
        const double closed = 2.0 * g * trace.meta.h.alpha * std::sqrt(static_cast<double>(r.round)) / std::sqrt(eps);
        tally.add(sum, closed);
      }
    }
  }
  return finish("sum_bounds", tally, "G=" + format_double(g));
}

CheckReport check_second_moment(const Trace& trace, const Problem& problem) {
  const std::string name = "second_moment";
  if (!trace.snapshots) return not_applicable(name, "no snapshots recorded");
  if (!trace.meta.bounds.G) return not_applicable(name, "problem declares no gradient bound");
  if (problem.dim() != trace.meta.dim) throw ShapeError("problem dimension does not match trace");
  const auto& s = *trace.snapshots;
  if (s.rounds.empty() || !problem.second_moment(s.rounds.front().x_hat)) {
    return not_applicable(name, "problem exposes no exact second moment");
  }
  const double G = *trace.meta.bounds.G;
  const double eps = trace.meta.h.epsilon;
  const double d = static_cast<double>(trace.meta.dim);
  InequalityTally tally;
  for (std::size_t t = 0; t < s.rounds.size(); ++t) {
    const auto& snap = s.rounds[t];
    const auto& rec = trace.rounds.at(t);
    const Tensor sigma2 = *problem.second_moment(snap.x_hat);
    const Tensor grad = problem.full_gradient(snap.x_hat);
    const double grad_sq = dot(grad, grad);
    for (std::size_t w = 0; w < snap.v.size(); ++w) {
      const Tensor v_prev = t == 0 ? Tensor::zeros(snap.v[w].size()) : s.rounds[t - 1].v[w];
      double v_hat_l1 = 0.0;
      double weighted = 0.0;  // sum_k alpha_t / sqrt(v_hat_k + eps) grad_k^2
      for (std::size_t i = 0; i < v_prev.size(); ++i) {
        const double v_hat = rec.theta_t * v_prev[i] + (1.0 - rec.theta_t) * sigma2[i];
        v_hat_l1 += v_hat;
        weighted += rec.alpha_t / std::sqrt(v_hat + eps) * grad[i] * grad[i];
      }
      tally.add(v_hat_l1, G * G);
      const double middle = std::sqrt(v_hat_l1 + eps * d) / rec.alpha_t * weighted;
      tally.add(grad_sq, middle);
      tally.add(middle, std::sqrt(G * G + eps * d) / rec.alpha_t * weighted);
    }
  }
  return finish(name, tally, "G=" + format_double(G));
}

Theorem theorem_for(const TraceMeta& meta) {
  const bool qg = !Quantizer::parse(meta.kg, QuantizerRole::gradient).is_identity();
  const bool qx = !Quantizer::parse(meta.kx, QuantizerRole::weight).is_identity();
  if (qg && qx) return Theorem::both;
  if (qx) return Theorem::weights;
  return Theorem::gradients;
}

std::optional<ConstantInputs> constant_inputs_for(const Trace& trace) {
  const auto& m = trace.meta;
  if (!m.bounds.L) return std::nullopt;
  ConstantInputs in;
  double observed_g = 0.0;
  double observed_d = 0.0;
  for (const auto& r : trace.rounds) {
    observed_d = std::max(observed_d, r.x_norm);
    for (const auto& w : r.workers) observed_g = std::max(observed_g, w.grad_norm);
  }
  in.G = m.bounds.G.value_or(observed_g);
  in.L = *m.bounds.L;
  // Iterates are not projected, so the largest observed norm can exceed the
  // declared bound.
  in.D = std::max({m.bounds.D.value_or(0.0), observed_d, trace.summary.max_x_norm});
  in.f_gap = m.initial_loss - m.bounds.f_star;
  in.dim = m.dim;
  in.delta_g = trace_delta_g(trace).value_or(1.0);
  std::optional<double> dx;
  for (const auto& r : trace.rounds) {
    if (r.weight_contraction) dx = std::min(dx.value_or(1.0), *r.weight_contraction);
  }
  in.delta_x = dx.value_or(1.0);
  return in;
}

CheckReport check_theorem_bound(const Trace& trace, const AnalysisConstants& k, Theorem which) {
  const std::string name = "theorem_bound";
  if (trace.rounds.empty()) return not_applicable(name, "empty trace");
  const bool qg = !Quantizer::parse(trace.meta.kg, QuantizerRole::gradient).is_identity();
  if (qg && !trace.meta.error_feedback) return not_applicable(name, "bound assumes error feedback");
  const auto rhs = theoretical_bound(k, trace.rounds.size(), which);
  if (!rhs) return not_applicable(name, "schedule not covered by the analysis");
  double mean = 0.0;
  for (const auto& r : trace.rounds) mean += r.grad_norm * r.grad_norm;
  mean /= static_cast<double>(trace.rounds.size());
  InequalityTally tally;
  tally.add(mean, *rhs);
  if (!std::isfinite(*rhs)) {
    return CheckReport{name, CheckStatus::fail, 0.0, "bound is not finite"};
  }
  std::string detail = describe(which);
  detail += " bound, mean grad_norm^2=" + format_double(mean) + ", bound=" + format_double(*rhs);
  return finish(name, tally, detail);
}

namespace {

CheckReport check_bits(const Trace& trace) {
  const auto& m = trace.meta;
  const std::uint64_t per_round = message_bits(m.kx, m.dim, QuantizerRole::weight) +
                                  m.workers * message_bits(m.kg, m.dim, QuantizerRole::gradient);
  std::uint64_t cum = 0;
  std::size_t bad = 0;
  for (const auto& r : trace.rounds) {
    cum += r.bits;
    if (r.bits != per_round || r.cum_bits != cum) ++bad;
  }
  CheckReport rep;
  rep.name = "bit_accounting";
  rep.status = bad == 0 ? CheckStatus::pass : CheckStatus::fail;
  rep.margin = 0.0;
  rep.detail = std::to_string(per_round) + " bits per round expected; " + std::to_string(bad) + " mismatched rounds";
  return rep;
}

}  // namespace

std::vector<CheckReport> verify_trace(const Trace& trace, const Problem* problem, const VerifyOptions& options) {
  std::vector<CheckReport> out;
  out.push_back(check_bits(trace));
  out.push_back(check_ef_identity(trace));
  out.push_back(check_residual_sum(trace));
  out.push_back(check_next_residual_sum(trace));
  out.push_back(check_sum_bounds(trace));

  const auto inputs = constant_inputs_for(trace);
  // The moment bound needs only gamma and C1, which do not depend on the
  // problem constants.
  const AnalysisConstants k = compute_constants(trace.meta.h, inputs.value_or(ConstantInputs{}), options.theta_prime);
  out.push_back(check_moment_bound(trace, k));

  if (problem) {
    out.push_back(check_second_moment(trace, *problem));
  } else {
    out.push_back(not_applicable("second_moment", "problem not available"));
  }

  if (inputs) {
    out.push_back(check_theorem_bound(trace, k, theorem_for(trace.meta)));
  } else {
    out.push_back(not_applicable("theorem_bound", "smoothness constant unknown"));
  }
  return out;
}

bool any_failed(const std::vector<CheckReport>& reports) {
  return std::any_of(reports.begin(), reports.end(), [](const auto& r) { return r.status == CheckStatus::fail; });
}

std::string format_report(const std::vector<CheckReport>& reports) {
  std::ostringstream os;
  for (const auto& r : reports) {
    os << r.name << '\t' << describe(r.status) << '\t' << format_double(r.margin) << '\t' << r.detail << '\n';
  }
  return os.str();
}

void write_report(const std::vector<CheckReport>& reports, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << format_report(reports);
  if (!out) throw IoError("failed writing report " + path.string());
}

}  // namespace qadam
