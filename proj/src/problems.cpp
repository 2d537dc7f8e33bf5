#include "qadam/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "qadam/errors.hpp"

namespace qadam {

std::mt19937_64 GradientStream::next_engine() {
  const std::uint64_t c = counter_++;
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Quadratic

QuadraticProblem::QuadraticProblem(QuadraticOptions options) : radius_(options.radius) {
  if (options.dim == 0) throw ConfigError("dim must be >= 1");
  if (!(options.condition_number >= 1.0) || !std::isfinite(options.condition_number)) {
    throw ConfigError("condition number must be >= 1");
  }
  if (!(options.radius > 0.0)) throw ConfigError("radius must be > 0");

  const std::size_t d = options.dim;
  std::vector<double> eig(d, 1.0);
  for (std::size_t i = 0; i < d && d > 1; ++i) {
    eig[i] = std::pow(options.condition_number, static_cast<double>(i) / static_cast<double>(d - 1));
  }
  eigenvalues_ = Tensor(std::move(eig));

  if (options.minimizer) {
    if (options.minimizer->size() != d) throw ShapeError("minimizer length does not match dim");
    minimizer_ = *options.minimizer;
  } else {
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> xs(d);
    for (auto& v : xs) v = u(rng);
    minimizer_ = Tensor(std::move(xs));
  }

  noise_ = options.noise_levels;
  if (noise_.empty()) noise_.push_back(0.0);
  double mean = 0.0;
  double max_abs = 0.0;
  for (double s : noise_) {
    if (!std::isfinite(s)) throw ConfigError("noise levels must be finite");
    mean += s;
    noise_second_moment_ += s * s;
    max_abs = std::max(max_abs, std::abs(s));
  }
  mean /= static_cast<double>(noise_.size());
  noise_second_moment_ /= static_cast<double>(noise_.size());
  if (std::abs(mean) > 1e-12 * std::max(1.0, max_abs)) throw ConfigError("noise set must have zero mean");
}

double QuadraticProblem::loss(const Tensor& x) const {
  if (x.size() != dim()) throw ShapeError("quadratic: wrong parameter length");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - minimizer_[i];
    acc += eigenvalues_[i] * r * r;
  }
  return 0.5 * acc;
}

Tensor QuadraticProblem::full_gradient(const Tensor& x) const {
  if (x.size() != dim()) throw ShapeError("quadratic: wrong parameter length");
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = eigenvalues_[i] * (x[i] - minimizer_[i]);
  return Tensor(std::move(g));
}

Tensor QuadraticProblem::stochastic_gradient(const Tensor& x, GradientStream& stream) const {
  if (x.size() != dim()) throw ShapeError("quadratic: wrong parameter length");
  auto rng = stream.next_engine();
  std::uniform_int_distribution<std::size_t> pick(0, noise_.size() - 1);
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = eigenvalues_[i] * (x[i] - minimizer_[i]) + noise_[pick(rng)];
  }
  return Tensor(std::move(g));
}

std::optional<Tensor> QuadraticProblem::second_moment(const Tensor& x) const {
  const Tensor g = full_gradient(x);
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] * g[i] + noise_second_moment_;
  return Tensor(std::move(out));
}

ProblemBounds QuadraticProblem::bounds() const {
  const double lmax = norm(eigenvalues_, NormKind::linf);
  double max_noise = 0.0;
  for (double s : noise_) max_noise = std::max(max_noise, std::abs(s));
  // ||A(x - x*) + xi|| <= L (||x|| + ||x*||) + sqrt(d) max|s| on ||x|| <= radius.
  const double g = lmax * (radius_ + norm(minimizer_, NormKind::l2)) +
                   std::sqrt(static_cast<double>(dim())) * max_noise;
  return {g, lmax, radius_, 0.0};
}

// ---------------------------------------------------------------------------
// Finite sums

FiniteSumProblem::FiniteSumProblem(std::size_t n_samples, std::size_t batch) : n_(n_samples), batch_(batch) {
  if (n_samples == 0) throw ConfigError("n_samples must be >= 1");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (batch > n_samples) throw ConfigError("batch must not exceed n_samples");
}

double FiniteSumProblem::loss(const Tensor& x) const {
  double acc = 0.0;
  for (std::size_t j = 0; j < n_; ++j) acc += sample_loss(x, j);
  return acc / static_cast<double>(n_);
}

Tensor FiniteSumProblem::full_gradient(const Tensor& x) const {
  std::vector<double> acc(dim(), 0.0);
  for (std::size_t j = 0; j < n_; ++j) accumulate_sample_gradient(x, j, acc);
  for (auto& v : acc) v /= static_cast<double>(n_);
  return Tensor(std::move(acc));
}

Tensor FiniteSumProblem::stochastic_gradient(const Tensor& x, GradientStream& stream) const {
  auto rng = stream.next_engine();
  std::vector<std::size_t> all(n_);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> chosen;
  chosen.reserve(batch_);
  // Selection sampling keeps the indices sorted, so batch == n reproduces
  // full_gradient bit for bit.
  std::sample(all.begin(), all.end(), std::back_inserter(chosen), batch_, rng);
  std::vector<double> acc(dim(), 0.0);
  for (std::size_t j : chosen) accumulate_sample_gradient(x, j, acc);
  for (auto& v : acc) v /= static_cast<double>(batch_);
  return Tensor(std::move(acc));
}

std::optional<Tensor> FiniteSumProblem::second_moment(const Tensor& x) const {
  const std::size_t d = dim();
  std::vector<std::vector<double>> per_sample(n_, std::vector<double>(d, 0.0));
  std::vector<double> mean(d, 0.0);
  for (std::size_t j = 0; j < n_; ++j) {
    accumulate_sample_gradient(x, j, per_sample[j]);
    for (std::size_t i = 0; i < d; ++i) mean[i] += per_sample[j][i];
  }
  for (auto& v : mean) v /= static_cast<double>(n_);
  std::vector<double> out(d, 0.0);
  // Variance of a mean of `batch` draws without replacement.
  const double fpc = n_ > 1 ? static_cast<double>(n_ - batch_) / static_cast<double>(n_ - 1) : 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double pop_var = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      const double r = per_sample[j][i] - mean[i];
      pop_var += r * r;
    }
    pop_var /= static_cast<double>(n_);
    out[i] = mean[i] * mean[i] + pop_var / static_cast<double>(batch_) * fpc;
  }
  return Tensor(std::move(out));
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

double row_dot(const std::vector<double>& a, const Tensor& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * w[i];
  return acc;
}

}  // namespace

LogisticProblem::LogisticProblem(LogisticData data, std::size_t batch)
    : FiniteSumProblem(data.labels.size(), batch), data_(std::move(data)) {
  if (data_.features.size() != data_.labels.size()) throw ShapeError("logistic: features/labels count mismatch");
  dim_ = data_.features.front().size();
  if (dim_ == 0) throw ConfigError("logistic: zero feature dimension");
  for (std::size_t j = 0; j < data_.features.size(); ++j) {
    const auto& a = data_.features[j];
    if (a.size() != dim_) throw ShapeError("logistic: ragged feature rows");
    if (data_.labels[j] != 1.0 && data_.labels[j] != -1.0) throw FormatError("logistic: labels must be +1/-1");
    double sq = 0.0;
    for (double v : a) {
      if (!std::isfinite(v)) throw FormatError("logistic: non-finite feature");
      sq += v * v;
    }
    sum_sq_feature_norm_ += sq;
    max_feature_norm_ = std::max(max_feature_norm_, std::sqrt(sq));
  }
}

ProblemBounds LogisticProblem::bounds() const {
  // |sigmoid| <= 1 bounds every per-sample gradient by its feature norm; the
  // Hessian is at most (1/4n) sum a a^T whose trace bounds its top eigenvalue.
  const double n = static_cast<double>(sample_count());
  return {max_feature_norm_, 0.25 * sum_sq_feature_norm_ / n, std::nullopt, 0.0};
}

double LogisticProblem::sample_loss(const Tensor& x, std::size_t j) const {
  return softplus(-data_.labels[j] * row_dot(data_.features[j], x));
}

void LogisticProblem::accumulate_sample_gradient(const Tensor& x, std::size_t j, std::vector<double>& acc) const {
  const auto& a = data_.features[j];
  const double y = data_.labels[j];
  const double coeff = -y * sigmoid(-y * row_dot(a, x));
  for (std::size_t i = 0; i < dim_; ++i) acc[i] += coeff * a[i];
}

std::shared_ptr<LogisticProblem> logistic_synthetic(const LogisticOptions& options) {
  if (options.dim == 0) throw ConfigError("dim must be >= 1");
  if (options.batch == 0) throw ConfigError("batch must be >= 1");
  if (options.batch > options.n_samples) throw ConfigError("batch must not exceed n_samples");
  if (!(options.label_noise >= 0.0 && options.label_noise < 0.5)) throw ConfigError("label noise must be in [0, 0.5)");
  if (!(options.feature_spread >= 1.0) || !std::isfinite(options.feature_spread)) {
    throw ConfigError("feature spread must be >= 1");
  }

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::bernoulli_distribution flip(options.label_noise);

  std::vector<double> w(options.dim);
  for (auto& v : w) v = normal(rng);
  const Tensor separator(w);

  std::vector<double> scales(options.dim, 1.0);
  for (std::size_t i = 1; i < options.dim; ++i) {
    scales[i] = std::pow(options.feature_spread, -static_cast<double>(i) / static_cast<double>(options.dim - 1));
  }

  LogisticData data;
  data.features.reserve(options.n_samples);
  for (std::size_t j = 0; j < options.n_samples; ++j) {
    std::vector<double> a(options.dim);
    for (std::size_t i = 0; i < options.dim; ++i) a[i] = scales[i] * unit(rng);
    double y = row_dot(a, separator) >= 0.0 ? 1.0 : -1.0;
    if (flip(rng)) y = -y;
    data.features.push_back(std::move(a));
    data.labels.push_back(y);
  }
  auto problem = std::make_shared<LogisticProblem>(std::move(data), options.batch);
  problem->set_separator(separator);
  return problem;
}

LogisticData load_logistic_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset " + path.string() + " is empty (header row required)");

  LogisticData data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw FormatError("dataset line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (row.size() < 2) throw FormatError("dataset line " + std::to_string(line_no) + ": need features and a label");
    double label = row.back();
    row.pop_back();
    if (label == 0.0) label = -1.0;
    if (label != 1.0 && label != -1.0) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": label must be 0/1 or -1/+1");
    }
    if (!data.features.empty() && row.size() != data.features.front().size()) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": inconsistent column count");
    }
    data.features.push_back(std::move(row));
    data.labels.push_back(label);
  }
  if (data.features.empty()) throw FormatError("dataset " + path.string() + " has no samples");
  return data;
}

// ---------------------------------------------------------------------------
// Tiny MLP

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "softplus") return Activation::softplus;
  throw ConfigError("activation must be tanh, sigmoid or softplus (smooth), got '" + name + "'");
}

std::string describe(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::softplus:
      return "softplus";
  }
  return "?";
}

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::tanh:
      return std::tanh(z);
    case Activation::sigmoid:
      return sigmoid(z);
    case Activation::softplus:
      return softplus(z);
  }
  return z;
}

double activate_derivative(Activation a, double z) {
  switch (a) {
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::sigmoid: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    case Activation::softplus:
      return sigmoid(z);
  }
  return 1.0;
}

}  // namespace

MlpProblem::MlpProblem(MlpOptions options)
    : FiniteSumProblem(options.n_samples, options.batch), options_(std::move(options)) {
  const auto& widths = options_.layer_widths;
  if (widths.size() < 3) throw ConfigError("mlp needs input, at least one hidden layer and output widths");
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("mlp layer width must be >= 1");
  }
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    offsets_.push_back(param_count_);
    param_count_ += widths[l + 1] * widths[l] + widths[l + 1];
  }

  std::mt19937_64 rng(options_.dataset_seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const std::size_t in_w = widths.front();
  const std::size_t out_w = widths.back();

  // Teacher: y_o = sin(c_o . u + b_o), centered over the dataset.
  std::vector<std::vector<double>> teacher(out_w, std::vector<double>(in_w));
  std::vector<double> teacher_bias(out_w);
  for (auto& row : teacher) {
    for (auto& v : row) v = 2.0 * unit(rng);
  }
  for (auto& b : teacher_bias) b = unit(rng);

  inputs_.resize(options_.n_samples, std::vector<double>(in_w));
  targets_.resize(options_.n_samples, std::vector<double>(out_w));
  std::vector<double> target_mean(out_w, 0.0);
  for (std::size_t j = 0; j < options_.n_samples; ++j) {
    for (auto& v : inputs_[j]) v = unit(rng);
    for (std::size_t o = 0; o < out_w; ++o) {
      double z = teacher_bias[o];
      for (std::size_t i = 0; i < in_w; ++i) z += teacher[o][i] * inputs_[j][i];
      targets_[j][o] = std::sin(z);
      target_mean[o] += targets_[j][o];
    }
  }
  for (auto& m : target_mean) m /= static_cast<double>(options_.n_samples);
  for (auto& t : targets_) {
    for (std::size_t o = 0; o < out_w; ++o) t[o] -= target_mean[o];
  }

  std::vector<double> init(param_count_, 0.0);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    for (std::size_t k = 0; k < widths[l + 1] * widths[l]; ++k) init[offsets_[l] + k] = bound * unit(rng);
  }
  initial_ = Tensor(std::move(init));
}

std::size_t MlpProblem::bias_offset(std::size_t layer) const {
  const auto& widths = options_.layer_widths;
  return offsets_[layer] + widths[layer + 1] * widths[layer];
}

std::vector<std::vector<double>> MlpProblem::forward(const Tensor& params, std::size_t j,
                                                     std::vector<std::vector<double>>* pre) const {
  if (params.size() != param_count_) throw ShapeError("mlp: wrong parameter length");
  const auto& widths = options_.layer_widths;
  const std::size_t layers = widths.size() - 1;
  std::vector<std::vector<double>> acts(layers + 1);
  acts[0] = inputs_[j];
  if (pre) pre->assign(layers, {});
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in_w = widths[l];
    const std::size_t out_w = widths[l + 1];
    const std::size_t w0 = offsets_[l];
    const std::size_t b0 = bias_offset(l);
    std::vector<double> z(out_w);
    for (std::size_t o = 0; o < out_w; ++o) {
      double acc = params[b0 + o];
      for (std::size_t i = 0; i < in_w; ++i) acc += params[w0 + o * in_w + i] * acts[l][i];
      z[o] = acc;
    }
    if (pre) (*pre)[l] = z;
    const bool hidden = l + 1 < layers;
    if (hidden) {
      for (auto& v : z) v = activate(options_.activation, v);
    }
    acts[l + 1] = std::move(z);
  }
  return acts;
}

double MlpProblem::sample_loss(const Tensor& x, std::size_t j) const {
  const auto acts = forward(x, j, nullptr);
  double acc = 0.0;
  const auto& out = acts.back();
  for (std::size_t o = 0; o < out.size(); ++o) {
    const double r = out[o] - targets_[j][o];
    acc += r * r;
  }
  return 0.5 * acc;
}

void MlpProblem::accumulate_sample_gradient(const Tensor& x, std::size_t j, std::vector<double>& acc) const {
  std::vector<std::vector<double>> pre;
  const auto acts = forward(x, j, &pre);
  const auto& widths = options_.layer_widths;
  const std::size_t layers = widths.size() - 1;

  // delta = dLoss/dz for the current layer, starting at the linear output.
  std::vector<double> delta(widths.back());
  for (std::size_t o = 0; o < delta.size(); ++o) delta[o] = acts.back()[o] - targets_[j][o];

  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in_w = widths[l];
    const std::size_t out_w = widths[l + 1];
    const std::size_t w0 = offsets_[l];
    const std::size_t b0 = bias_offset(l);
    for (std::size_t o = 0; o < out_w; ++o) {
      acc[b0 + o] += delta[o];
      for (std::size_t i = 0; i < in_w; ++i) acc[w0 + o * in_w + i] += delta[o] * acts[l][i];
    }
    if (l == 0) break;
    std::vector<double> prev(in_w, 0.0);
    for (std::size_t i = 0; i < in_w; ++i) {
      double s = 0.0;
      for (std::size_t o = 0; o < out_w; ++o) s += x[w0 + o * in_w + i] * delta[o];
      prev[i] = s * activate_derivative(options_.activation, pre[l - 1][i]);
    }
    delta = std::move(prev);
  }
}

}  // namespace qadam
