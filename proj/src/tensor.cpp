#include "qadam/tensor.hpp"

#include <cmath>
#include <string>

#include "qadam/errors.hpp"

namespace qadam {

namespace {

void require_finite(const std::vector<double>& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw DomainError("non-finite tensor element at index " + std::to_string(i));
    }
  }
}

void require_same_length(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": length mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_length(a, b, op);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(std::move(out));
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return Tensor(std::move(out));
}

}  // namespace

Tensor::Tensor(std::vector<double> data) : data_(std::move(data)) { require_finite(data_); }

Tensor::Tensor(std::initializer_list<double> values) : data_(values) { require_finite(data_); }

Tensor Tensor::zeros(std::size_t n) { return Tensor(std::vector<double>(n, 0.0)); }

Tensor Tensor::filled(std::size_t n, double value) { return Tensor(std::vector<double>(n, value)); }

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return zip(a, b, "div", [](double x, double y) {
    if (!(y > 0.0)) throw DomainError("div: nonpositive denominator");
    return x / y;
  });
}

Tensor div(const Tensor& a, double b) {
  if (!(b > 0.0)) throw DomainError("div: nonpositive denominator");
  return map(a, [b](double x) { return x / b; });
}

Tensor add(const Tensor& a, double b) {
  return map(a, [b](double x) { return x + b; });
}

Tensor scale(const Tensor& a, double factor) {
  return map(a, [factor](double x) { return factor * x; });
}

Tensor square(const Tensor& a) {
  return map(a, [](double x) { return x * x; });
}

Tensor sqrt(const Tensor& a) {
  return map(a, [](double x) {
    if (!(x > 0.0)) throw DomainError("sqrt: nonpositive argument");
    return std::sqrt(x);
  });
}

Tensor negate(const Tensor& a) {
  return map(a, [](double x) { return -x; });
}

Tensor axpy(const Tensor& a, double factor, const Tensor& b) {
  return zip(a, b, "axpy", [factor](double x, double y) { return x + factor * y; });
}

double norm(const Tensor& x, NormKind kind) {
  double acc = 0.0;
  switch (kind) {
    case NormKind::l1:
      for (double v : x) acc += std::abs(v);
      return acc;
    case NormKind::l2:
      for (double v : x) acc += v * v;
      return std::sqrt(acc);
    case NormKind::linf:
      for (double v : x) acc = std::max(acc, std::abs(v));
      return acc;
  }
  return acc;
}

double sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_length(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_length(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace qadam
