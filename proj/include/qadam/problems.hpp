#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qadam/tensor.hpp"

namespace qadam {

// Counter-based sample source: draw number `counter` of stream `seed` is a
// pure function of the pair, so replays and parallel workers agree.
class GradientStream {
 public:
  explicit GradientStream(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  // Engine for the current draw; advances the counter.
  std::mt19937_64 next_engine();

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

struct ProblemBounds {
  std::optional<double> G;  // bound on every stochastic gradient norm
  std::optional<double> L;  // gradient Lipschitz constant
  std::optional<double> D;  // radius of the ball on which G is valid
  double f_star = 0.0;      // lower bound on the objective
};

class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual double loss(const Tensor& x) const = 0;
  virtual Tensor full_gradient(const Tensor& x) const = 0;
  // Unbiased for full_gradient(x) over the stream's distribution.
  virtual Tensor stochastic_gradient(const Tensor& x, GradientStream& stream) const = 0;
  // Coordinatewise E[g^2] at x when available in closed form.
  virtual std::optional<Tensor> second_moment(const Tensor&) const { return std::nullopt; }
  virtual ProblemBounds bounds() const = 0;
  virtual Tensor initial_point() const = 0;
};

using ProblemPtr = std::shared_ptr<const Problem>;

struct QuadraticOptions {
  std::size_t dim = 10;
  double condition_number = 1.0;
  // Per-coordinate noise drawn uniformly from this zero-mean set. Empty
  // means noiseless.
  std::vector<double> noise_levels;
  // Minimizer; drawn uniformly from [-1, 1]^dim with `seed` when absent.
  std::optional<Tensor> minimizer;
  std::uint64_t seed = 0;
  // Radius of the ball on which the declared G holds.
  double radius = 10.0;
};

// f(x) = 1/2 (x - x*)^T A (x - x*), A diagonal with eigenvalues spaced
// geometrically from 1 to condition_number.
class QuadraticProblem final : public Problem {
 public:
  explicit QuadraticProblem(QuadraticOptions options);

  std::string name() const override { return "quadratic"; }
  std::size_t dim() const override { return eigenvalues_.size(); }
  double loss(const Tensor& x) const override;
  Tensor full_gradient(const Tensor& x) const override;
  Tensor stochastic_gradient(const Tensor& x, GradientStream& stream) const override;
  std::optional<Tensor> second_moment(const Tensor& x) const override;
  ProblemBounds bounds() const override;
  Tensor initial_point() const override { return Tensor::zeros(dim()); }

  const Tensor& minimizer() const { return minimizer_; }
  const Tensor& eigenvalues() const { return eigenvalues_; }

 private:
  Tensor eigenvalues_;
  Tensor minimizer_;
  std::vector<double> noise_;
  double noise_second_moment_ = 0.0;
  double radius_;
};

// Objective that is a mean over n samples; stochastic gradients average a
// uniformly random subset of `batch` distinct samples.
class FiniteSumProblem : public Problem {
 public:
  FiniteSumProblem(std::size_t n_samples, std::size_t batch);

  std::size_t sample_count() const { return n_; }
  std::size_t batch() const { return batch_; }

  double loss(const Tensor& x) const override;
  Tensor full_gradient(const Tensor& x) const override;
  Tensor stochastic_gradient(const Tensor& x, GradientStream& stream) const override;
  std::optional<Tensor> second_moment(const Tensor& x) const override;

  virtual double sample_loss(const Tensor& x, std::size_t j) const = 0;
  // acc += gradient of sample j.
  virtual void accumulate_sample_gradient(const Tensor& x, std::size_t j, std::vector<double>& acc) const = 0;

 private:
  std::size_t n_;
  std::size_t batch_;
};

struct LogisticData {
  std::vector<std::vector<double>> features;
  std::vector<double> labels;  // +1 / -1
};

struct LogisticOptions {
  std::size_t dim = 20;
  std::size_t n_samples = 500;
  std::size_t batch = 10;
  std::uint64_t seed = 0;
  // Probability of flipping each generated label. Zero gives separable data.
  double label_noise = 0.1;
  // Ratio between the largest and smallest feature scale; feature j is drawn
  // from [-s_j, s_j] with s_j spaced geometrically from 1 down to 1/spread.
  double feature_spread = 1.0;
};

// Mean binary logistic loss log(1 + exp(-y a.w)).
class LogisticProblem final : public FiniteSumProblem {
 public:
  LogisticProblem(LogisticData data, std::size_t batch);

  std::string name() const override { return "logistic"; }
  std::size_t dim() const override { return dim_; }
  ProblemBounds bounds() const override;
  Tensor initial_point() const override { return Tensor::zeros(dim_); }

  double sample_loss(const Tensor& x, std::size_t j) const override;
  void accumulate_sample_gradient(const Tensor& x, std::size_t j, std::vector<double>& acc) const override;

  // Weights used to label the generated data (empty for imported data).
  const std::optional<Tensor>& separator() const { return separator_; }
  void set_separator(Tensor w) { separator_ = std::move(w); }

 private:
  LogisticData data_;
  std::size_t dim_;
  double max_feature_norm_ = 0.0;
  double sum_sq_feature_norm_ = 0.0;
  std::optional<Tensor> separator_;
};

std::shared_ptr<LogisticProblem> logistic_synthetic(const LogisticOptions& options);

// Rows are samples, last column is the label ({0,1} or {-1,+1}); first row is
// a header. IoError / FormatError on unreadable or malformed input.
LogisticData load_logistic_csv(const std::filesystem::path& path);

enum class Activation { tanh, sigmoid, softplus };

Activation parse_activation(const std::string& name);
std::string describe(Activation a);

struct MlpOptions {
  // Input width, hidden widths..., output width.
  std::vector<std::size_t> layer_widths{3, 8, 1};
  Activation activation = Activation::tanh;
  std::uint64_t dataset_seed = 0;
  std::size_t n_samples = 64;
  std::size_t batch = 8;
};

// Fully connected network with smooth hidden activations and a linear output,
// mean-squared loss 1/2 ||y_hat - y||^2 against zero-mean synthetic targets.
// Parameters are flattened layer by layer as W (row-major, out x in) then b.
class MlpProblem final : public FiniteSumProblem {
 public:
  explicit MlpProblem(MlpOptions options);

  std::string name() const override { return "mlp"; }
  std::size_t dim() const override { return param_count_; }
  ProblemBounds bounds() const override { return {std::nullopt, std::nullopt, std::nullopt, 0.0}; }
  Tensor initial_point() const override { return initial_; }

  double sample_loss(const Tensor& x, std::size_t j) const override;
  void accumulate_sample_gradient(const Tensor& x, std::size_t j, std::vector<double>& acc) const override;

  const std::vector<std::size_t>& widths() const { return options_.layer_widths; }
  // Offset of layer l's weight block and bias block inside the flat vector.
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const;

 private:
  // Activations of every layer (post-activation for hidden layers).
  std::vector<std::vector<double>> forward(const Tensor& params, std::size_t j,
                                           std::vector<std::vector<double>>* pre) const;

  MlpOptions options_;
  std::vector<std::size_t> offsets_;
  std::size_t param_count_ = 0;
  std::vector<std::vector<double>> inputs_;
  std::vector<std::vector<double>> targets_;
  Tensor initial_;
};

}  // namespace qadam
