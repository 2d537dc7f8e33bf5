#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qadam/optimizer.hpp"
#include "qadam/problems.hpp"
#include "qadam/trace.hpp"

namespace qadam {

// Problem and run quantities the analysis constants depend on.
struct ConstantInputs {
  double G = 1.0;       // gradient norm bound
  double L = 1.0;       // smoothness
  double D = 1.0;       // bound on ||x_t||
  double f_gap = 1.0;   // f(x_1) - f*
  std::size_t dim = 1;  // d
  double delta_g = 1.0;
  double delta_x = 1.0;
};

struct AnalysisConstants {
  double theta_prime = 0.0;
  double gamma = 0.0;
  std::uint64_t n_cut = 0;  // max{j : theta_j < theta'}, 0 if none
  double log_c1 = 0.0;
  double c1 = 1.0;
  double theta_1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  double c = 0.0;        // C
  double c_prime = 0.0;  // C'
  double c5 = 0.0;
  double c6 = 0.0;
  double c7 = 0.0;
  double c8 = 0.0;
  double c9 = 0.0;
  double c10 = 0.0;
  Hyperparams h;
  ConstantInputs inputs;
};

double default_theta_prime(double beta);

// ConfigError when theta' is outside (beta^2, 1), when gamma = beta/theta'
// is not below 1, when theta_1 <= 0, or when delta_g / delta_x are outside (0, 1].
AnalysisConstants compute_constants(const Hyperparams& h, const ConstantInputs& in,
                                    std::optional<double> theta_prime = std::nullopt);

// Which convergence statement applies: quantized gradients only, quantized
// weights only, or both.
enum class Theorem { gradients, weights, both };

std::string describe(Theorem which);

// Right-hand side of the applicable bound after T steps. Decay schedule:
// (A + B * H_T) / sqrt(T) + R with H_T the harmonic number; fixed horizon:
// (A + B) / sqrt(T) + R / 2. Empty for the halving schedule, which the
// analysis does not cover.
std::optional<double> theoretical_bound(const AnalysisConstants& k, std::uint64_t T, Theorem which);

enum class CheckStatus { pass, fail, not_applicable };

std::string describe(CheckStatus s);

struct CheckReport {
  std::string name;
  CheckStatus status = CheckStatus::not_applicable;
  // Worst-case slack (bound minus observed, relative where noted); 0 when
  // not applicable.
  double margin = 0.0;
  std::string detail;
};

// Relative slack used by every inequality check.
inline constexpr double kRelativeSlack = 1e-9;
inline constexpr double kEfIdentityTolerance = 1e-10;

// (x_{t+1} - mean_i e_{t+1}) - (x_t - mean_i e_t) + mean_i Delta_t, max
// absolute coordinate over the trace.
CheckReport check_ef_identity(const Trace& trace);

// Per worker and at every prefix: sum ||e_t|| ||Delta_t|| <= (1-delta)/delta sum ||Delta_t||^2,
// where e_t is the residual entering step t. delta defaults to the trace
// minimum contraction.
CheckReport check_residual_sum(const Trace& trace, std::optional<double> delta_g = std::nullopt);

// Same inequality pairing Delta_t with the residual e_{t+1} it leaves behind.
CheckReport check_next_residual_sum(const Trace& trace, std::optional<double> delta_g = std::nullopt);

// m_t^2 <= v_t / (C1 (1 - gamma) (1 - theta_t)) per coordinate, in log space.
CheckReport check_moment_bound(const Trace& trace, const AnalysisConstants& k);

// ||v_t||_1 <= G^2, ||Delta_t||^2 <= G^2 alpha_t^2 / eps, and per prefix
// sum ||Delta||^2 <= G^2/eps sum alpha_s^2, sum ||Delta|| <= G/sqrt(eps) sum alpha_s.
// G defaults to the largest stochastic gradient norm in the trace.
CheckReport check_sum_bounds(const Trace& trace, std::optional<double> G = std::nullopt);

// Uses the exact second moment sigma_t^2 at x_hat_t:
// v_hat_t = theta_t v_{t-1} + (1 - theta_t) sigma_t^2 must satisfy ||v_hat_t||_1 <= G^2 and
// ||grad f||^2 <= sqrt(||v_hat_t + eps||_1) / alpha_t * ||grad f||^2_{eta_hat}.
CheckReport check_second_moment(const Trace& trace, const Problem& problem);

// Mean of ||grad f(x_hat_t)||^2 over the trace against theoretical_bound.
CheckReport check_theorem_bound(const Trace& trace, const AnalysisConstants& k, Theorem which);

// Theorem for a run's quantizer settings.
Theorem theorem_for(const TraceMeta& meta);

// Inputs for compute_constants taken from a trace: declared bounds where the
// problem has them, trace maxima otherwise. D is the larger of the declared
// bound and max ||x_t||. Empty when L is unknown.
std::optional<ConstantInputs> constant_inputs_for(const Trace& trace);

struct VerifyOptions {
  std::optional<double> theta_prime;
};

// Every check applicable to the trace. `problem` enables the second-moment
// check when it exposes one.
std::vector<CheckReport> verify_trace(const Trace& trace, const Problem* problem, const VerifyOptions& options = {});

bool any_failed(const std::vector<CheckReport>& reports);

// One line per check: name, status, margin, detail (tab separated).
std::string format_report(const std::vector<CheckReport>& reports);
void write_report(const std::vector<CheckReport>& reports, const std::filesystem::path& path);

}  // namespace qadam
