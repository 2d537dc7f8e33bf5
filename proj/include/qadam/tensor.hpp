#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace qadam {

// Flat dense vector of binary64 values. Every element is finite; construction
// from non-finite data throws DomainError. Instances are never mutated after
// construction, so they can be shared freely across threads.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<double> data);
  Tensor(std::initializer_list<double> values);

  static Tensor zeros(std::size_t n);
  static Tensor filled(std::size_t n, double value);

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& vector() const { return data_; }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<double> data_;
};

enum class NormKind { l1, l2, linf };

// Coordinatewise arithmetic. Binary ops require equal lengths (ShapeError).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Denominators must be strictly positive (DomainError otherwise).
Tensor div(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, double b);
Tensor add(const Tensor& a, double b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);
// Arguments must be strictly positive.
Tensor sqrt(const Tensor& a);
Tensor negate(const Tensor& a);

// a + factor * b, evaluated coordinatewise without an intermediate tensor.
Tensor axpy(const Tensor& a, double factor, const Tensor& b);

// Reductions run left to right over the coordinates so results are
// bit-reproducible.
double norm(const Tensor& x, NormKind kind);
double sum(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);

// Largest |a_i - b_i|; ShapeError on length mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return negate(a); }

}  // namespace qadam
