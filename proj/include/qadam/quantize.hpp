#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qadam/tensor.hpp"

namespace qadam {

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 32;

// Uniform grid of 2^k - 1 levels on [-1, 1] with spacing 1/(2^{k-1} - 1).
// Code i maps to level (i - mid) / mid, where mid = 2^{k-1} - 1 is the code of 0.
class MidpointGrid {
 public:
  explicit MidpointGrid(int bits);

  int bits() const { return bits_; }
  std::uint32_t level_count() const { return 2 * mid_ + 1; }
  std::uint32_t zero_code() const { return mid_; }
  std::uint32_t max_code() const { return 2 * mid_; }
  double spacing() const { return 1.0 / static_cast<double>(mid_); }
  double level(std::uint32_t code) const;

  // Index of the level nearest to y (|y| <= 1); ties go away from zero.
  std::uint32_t nearest(double y) const;

 private:
  int bits_;
  std::uint32_t mid_;
};

// scale * levels[codes[i]] is the represented value. A zero scale means the
// source was all zeros and every code is the zero code.
struct QuantizedTensor {
  double scale = 0.0;
  int bits = kMinBits;
  std::vector<std::uint32_t> codes;

  std::size_t size() const { return codes.size(); }
  bool operator==(const QuantizedTensor&) const = default;
};

QuantizedTensor quantize_midpoint(const Tensor& x, int bits);
QuantizedTensor quantize_ternary(const Tensor& x);
// CorruptionError for codes outside the grid or a zero scale with non-zero codes.
Tensor dequantize(const QuantizedTensor& q);
void validate(const QuantizedTensor& q);

// Empirical delta = 1 - ||x - approx||_2 / ||x||_2. UndefinedDeltaError if x = 0.
double contraction_factor(const Tensor& x, const Tensor& approx);
double contraction_factor(const Tensor& x, const QuantizedTensor& q);

enum class QuantizerMode { identity, ternary, midpoint };
enum class QuantizerRole { gradient, weight };

// What actually crosses the server/worker boundary: the raw vector for the
// identity quantizer, grid codes otherwise.
using Packet = std::variant<Tensor, QuantizedTensor>;

Tensor unpack(const Packet& p);
std::size_t packet_length(const Packet& p);

class Quantizer {
 public:
  static Quantizer identity(QuantizerRole role = QuantizerRole::gradient);
  static Quantizer ternary(QuantizerRole role = QuantizerRole::gradient);
  static Quantizer midpoint(int bits, QuantizerRole role = QuantizerRole::gradient);
  // "fp", "ternary" or a bit width.
  static Quantizer parse(const std::string& spec, QuantizerRole role);

  QuantizerMode mode() const { return mode_; }
  QuantizerRole role() const { return role_; }
  int bits() const { return bits_; }
  bool is_identity() const { return mode_ == QuantizerMode::identity; }

  Packet encode(const Tensor& x) const;
  Tensor apply(const Tensor& x) const { return unpack(encode(x)); }

  std::string describe() const;

 private:
  Quantizer(QuantizerMode mode, QuantizerRole role, int bits) : mode_(mode), role_(role), bits_(bits) {}

  QuantizerMode mode_;
  QuantizerRole role_;
  int bits_;
};

}  // namespace qadam
