#include <gtest/gtest.h>

#include <cmath>

#include "qadam/distributed.hpp"
#include "qadam/errors.hpp"
#include "qadam/verify.hpp"
#include "support/constants_oracle.hpp"

using namespace qadam;
using qadam::testing::Big;
using qadam::testing::oracle;

namespace {

void expect_rel(double got, const Big& want, const char* what) {
  const double w = want.convert_to<double>();
  EXPECT_LE(std::abs(got - w), 1e-9 * std::abs(w)) << what << ": got " << got << ", oracle " << w;
}

void expect_matches_oracle(const Hyperparams& h, const ConstantInputs& in, std::optional<double> tp) {
  const auto k = compute_constants(h, in, tp);
  const auto o = oracle(h, in, k.theta_prime);
  EXPECT_EQ(k.n_cut, o.n_cut);
  expect_rel(k.gamma, o.gamma, "gamma");
  expect_rel(k.c1, o.c1, "C1");
  expect_rel(k.c2, o.c2, "C2");
  expect_rel(k.c3, o.c3, "C3");
  expect_rel(k.c, o.c, "C");
  expect_rel(k.c_prime, o.c_prime, "C'");
  expect_rel(k.c5, o.c, "C5");
  expect_rel(k.c6, o.c6, "C6");
  expect_rel(k.c7, o.c7, "C7");
  expect_rel(k.c8, o.c, "C8");
  expect_rel(k.c9, o.c9, "C9");
  expect_rel(k.c10, o.c7, "C10");
}

Trace run(std::size_t workers, const std::string& kg, bool ef, std::uint64_t steps, bool snapshots = true,
          const std::string& kx = "fp") {
  QuadraticOptions o;
  o.dim = 6;
  o.condition_number = 2.0;
  o.noise_levels = {-0.2, 0.2};
  SimulationConfig c;
  c.problem = std::make_shared<QuadraticProblem>(o);
  c.workers = workers;
  c.steps = steps;
  c.h.alpha = 0.01;
  c.qg = Quantizer::parse(kg, QuantizerRole::gradient);
  c.qx = Quantizer::parse(kx, QuantizerRole::weight);
  c.error_feedback = ef;
  c.snapshots = snapshots;
  c.seed = 3;
  return run_synchronous(c);
}

ConstantInputs sample_inputs() {
  ConstantInputs in;
  in.G = 3.5;
  in.L = 2.0;
  in.D = 10.0;
  in.f_gap = 4.25;
  in.dim = 50;
  in.delta_g = 0.4;
  in.delta_x = 0.9;
  return in;
}

}  // namespace

TEST(Constants, DefaultsExample) {
  const auto k = compute_constants(Hyperparams{}, ConstantInputs{});
  EXPECT_EQ(k.n_cut, 100u);
  EXPECT_NEAR(k.gamma, 0.9999495, 1e-7);
  EXPECT_DOUBLE_EQ(k.theta_prime, (1.0 + 0.99 * 0.99) / 2.0);
  EXPECT_NEAR(k.theta_1, 0.001, 1e-15);
  EXPECT_TRUE(std::isfinite(k.log_c1));
  EXPECT_GT(k.c1, 0.0);
  for (double v : {k.c2, k.c3, k.c, k.c_prime, k.c6, k.c7, k.c9, k.c10}) EXPECT_TRUE(std::isfinite(v));
}

TEST(Constants, MatchHighPrecisionOracle) {
  expect_matches_oracle(Hyperparams{}, ConstantInputs{}, std::nullopt);
  expect_matches_oracle(Hyperparams{}, sample_inputs(), std::nullopt);
  expect_matches_oracle(Hyperparams{}, sample_inputs(), 0.995);
  // 0.9999 sits exactly on theta_9990 and is left out: at a tie the
  // comparison depends on the rounding of theta_j.
  expect_matches_oracle(Hyperparams{}, sample_inputs(), 0.99987);
  Hyperparams h;
  h.alpha = 0.01;
  h.beta = 0.9;
  h.theta = 0.5;
  h.epsilon = 1e-3;
  expect_matches_oracle(h, sample_inputs(), std::nullopt);
  h.schedule = FixedHorizon{1000};
  expect_matches_oracle(h, sample_inputs(), std::nullopt);
  h.schedule = FixedHorizon{10};
  expect_matches_oracle(h, sample_inputs(), 0.96);
}

TEST(Constants, RejectsInvalid) {
  const Hyperparams h;
  EXPECT_THROW(compute_constants(h, {}, 0.98), ConfigError);   // below beta^2
  EXPECT_THROW(compute_constants(h, {}, 1.0), ConfigError);
  EXPECT_THROW(compute_constants(h, {}, 0.985), ConfigError);  // between beta^2 and beta: gamma > 1
  ConstantInputs in;
  in.delta_g = 0.0;
  EXPECT_THROW(compute_constants(h, in), ConfigError);
  in = {};
  in.delta_x = 1.5;
  EXPECT_THROW(compute_constants(h, in), ConfigError);
}

TEST(Bound, Formulas) {
  const auto k = compute_constants(Hyperparams{}, sample_inputs());
  const double H3 = 1.0 + 0.5 + 1.0 / 3.0;
  EXPECT_NEAR(*theoretical_bound(k, 3, Theorem::gradients), (k.c + k.c_prime * H3) / std::sqrt(3.0), 1e-12 * k.c_prime);
  EXPECT_NEAR(*theoretical_bound(k, 3, Theorem::weights), (k.c5 + k.c6 * H3) / std::sqrt(3.0) + k.c7,
              1e-12 * (k.c6 + k.c7));
  EXPECT_NEAR(*theoretical_bound(k, 3, Theorem::both), (k.c8 + k.c9 * H3) / std::sqrt(3.0) + k.c10,
              1e-12 * (k.c9 + k.c10));
  Hyperparams f;
  f.schedule = FixedHorizon{16};
  const auto kf = compute_constants(f, sample_inputs());
  EXPECT_NEAR(*theoretical_bound(kf, 16, Theorem::both), (kf.c8 + kf.c9) / 4.0 + kf.c10 / 2.0, 1e-12 * kf.c9);
  Hyperparams hv;
  hv.schedule = EpochHalving{10};
  EXPECT_FALSE(theoretical_bound(compute_constants(hv, sample_inputs()), 5, Theorem::gradients).has_value());
  EXPECT_THROW(theoretical_bound(k, 0, Theorem::gradients), ContractViolation);
}

TEST(Bound, TheoremSelection) {
  TraceMeta m;
  m.kg = "fp";
  m.kx = "fp";
  EXPECT_EQ(theorem_for(m), Theorem::gradients);
  m.kg = "3";
  EXPECT_EQ(theorem_for(m), Theorem::gradients);
  m.kx = "8";
  EXPECT_EQ(theorem_for(m), Theorem::both);
  m.kg = "fp";
  EXPECT_EQ(theorem_for(m), Theorem::weights);
}

TEST(Checks, PassOnRealTraces) {
  for (std::size_t workers : {1u, 3u}) {
    const Trace t = run(workers, "2", true, 2000);
    const auto k = compute_constants(t.meta.h, *constant_inputs_for(t));
    EXPECT_EQ(check_ef_identity(t).status, CheckStatus::pass) << check_ef_identity(t).detail;
    EXPECT_EQ(check_residual_sum(t).status, CheckStatus::pass);
    EXPECT_EQ(check_next_residual_sum(t).status, CheckStatus::pass);
    EXPECT_EQ(check_moment_bound(t, k).status, CheckStatus::pass);
    EXPECT_EQ(check_sum_bounds(t).status, CheckStatus::pass);
    EXPECT_EQ(check_sum_bounds(t, t.meta.bounds.G).status, CheckStatus::pass);
    const auto reports = verify_trace(t, nullptr);
    EXPECT_FALSE(any_failed(reports)) << format_report(reports);
  }
}

TEST(Checks, SecondMomentOnQuadratic) {
  QuadraticOptions o;
  o.dim = 6;
  o.condition_number = 2.0;
  o.noise_levels = {-0.2, 0.2};
  const QuadraticProblem p(o);
  const Trace t = run(2, "3", true, 500);
  EXPECT_EQ(check_second_moment(t, p).status, CheckStatus::pass) << check_second_moment(t, p).detail;
  const auto reports = verify_trace(t, &p);
  EXPECT_FALSE(any_failed(reports)) << format_report(reports);
}

TEST(Checks, NotApplicable) {
  const Trace no_ef = run(1, "2", false, 100);
  EXPECT_EQ(check_ef_identity(no_ef).status, CheckStatus::not_applicable);
  EXPECT_EQ(check_residual_sum(no_ef).status, CheckStatus::not_applicable);
  const Trace no_snaps = run(1, "2", true, 100, false);
  EXPECT_EQ(check_ef_identity(no_snaps).status, CheckStatus::not_applicable);
  EXPECT_EQ(check_moment_bound(no_snaps, compute_constants(Hyperparams{}, {})).status, CheckStatus::not_applicable);
  MlpOptions mo;
  mo.layer_widths = {6, 1, 1};
  EXPECT_EQ(check_second_moment(no_snaps, MlpProblem(mo)).status, CheckStatus::not_applicable);
}

TEST(NegativeControls, ResidualSum) {
  Trace t = run(1, "2", true, 50, false);
  // residuals far larger than the steps that produced them
  for (auto& r : t.rounds) {
    r.workers[0].err_norm = 100.0 * r.workers[0].delta_norm + 1.0;
    r.workers[0].next_err_norm = r.workers[0].err_norm;
  }
  EXPECT_EQ(check_residual_sum(t).status, CheckStatus::fail);
  EXPECT_EQ(check_next_residual_sum(t).status, CheckStatus::fail);
  EXPECT_THROW(check_residual_sum(t, 0.0), ConfigError);
}

TEST(NegativeControls, EfIdentity) {
  Trace t = run(2, "2", true, 50);
  std::vector<double> x = t.snapshots->final_x.vector();
  x[0] += 1e-6;
  t.snapshots->final_x = Tensor(x);
  EXPECT_EQ(check_ef_identity(t).status, CheckStatus::fail);
}

TEST(NegativeControls, MomentBound) {
  Trace t = run(1, "2", true, 50);
  const auto k = compute_constants(t.meta.h, {});
  auto& snap = t.snapshots->rounds[10];
  std::vector<double> m = snap.m[0].vector();
  std::vector<double> v = snap.v[0].vector();
  m[0] = 1.0;
  v[0] = 1e-12;
  snap.m[0] = Tensor(m);
  snap.v[0] = Tensor(v);
  EXPECT_EQ(check_moment_bound(t, k).status, CheckStatus::fail);
  v[0] = 0.0;
  snap.v[0] = Tensor(v);
  EXPECT_EQ(check_moment_bound(t, k).status, CheckStatus::fail);
}

TEST(NegativeControls, SumBounds) {
  Trace t = run(1, "2", true, 50, false);
  t.rounds[5].workers[0].v_l1 = 1e6;
  EXPECT_EQ(check_sum_bounds(t).status, CheckStatus::fail);
  t = run(1, "2", true, 50, false);
  t.rounds[5].workers[0].delta_norm = 10.0;
  EXPECT_EQ(check_sum_bounds(t).status, CheckStatus::fail);
}

TEST(NegativeControls, SecondMoment) {
  QuadraticOptions o;
  o.dim = 6;
  o.condition_number = 2.0;
  o.noise_levels = {-0.2, 0.2};
  const QuadraticProblem p(o);
  Trace t = run(1, "3", true, 50);
  t.snapshots->rounds[3].v[0] = Tensor::filled(6, 1e6);
  EXPECT_EQ(check_second_moment(t, p).status, CheckStatus::fail);
}

TEST(NegativeControls, TheoremBoundAndBits) {
  Trace t = run(1, "fp", true, 50, false);
  const auto k = compute_constants(t.meta.h, *constant_inputs_for(t));
  EXPECT_EQ(check_theorem_bound(t, k, Theorem::gradients).status, CheckStatus::pass);
  for (auto& r : t.rounds) r.grad_norm = 1e100;
  EXPECT_EQ(check_theorem_bound(t, k, Theorem::gradients).status, CheckStatus::fail);

  Trace b = run(2, "3", true, 20, false, "7");
  EXPECT_FALSE(any_failed(verify_trace(b, nullptr)));
  b.rounds[4].bits += 1;
  const auto reports = verify_trace(b, nullptr);
  EXPECT_EQ(reports.front().name, "bit_accounting");
  EXPECT_EQ(reports.front().status, CheckStatus::fail);
}

TEST(Report, Format) {
  const std::vector<CheckReport> reports{{"a", CheckStatus::pass, 0.5, "ok"}, {"b", CheckStatus::not_applicable, 0.0, "x"}};
  EXPECT_EQ(format_report(reports), "a\tpass\t0.5\tok\nb\tn/a\t0\tx\n");
  EXPECT_FALSE(any_failed(reports));
}
