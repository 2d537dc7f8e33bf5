#include "qadam/quantize.hpp"

#include <charconv>
#include <cmath>

#include "qadam/errors.hpp"

namespace qadam {

namespace {

void require_bits(int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw ConfigError("quantizer bit width must be in [" + std::to_string(kMinBits) + ", " +
                      std::to_string(kMaxBits) + "], got " + std::to_string(bits));
  }
}

}  // namespace

MidpointGrid::MidpointGrid(int bits) : bits_(bits) {
  require_bits(bits);
  mid_ = static_cast<std::uint32_t>((std::uint64_t{1} << (bits - 1)) - 1);
}

double MidpointGrid::level(std::uint32_t code) const {
  if (code > max_code()) throw CorruptionError("code " + std::to_string(code) + " outside grid");
  // Mirror-image codes divide equal magnitudes, so level(mid+j) == -level(mid-j) exactly.
  if (code >= mid_) return static_cast<double>(code - mid_) / static_cast<double>(mid_);
  return -(static_cast<double>(mid_ - code) / static_cast<double>(mid_));
}

std::uint32_t MidpointGrid::nearest(double y) const {
  const double a = std::abs(y);
  // Candidates around floor(a * mid); the product may be off by one ulp so the
  // final choice compares true distances to the level values.
  const auto guess = static_cast<std::int64_t>(std::floor(a * static_cast<double>(mid_)));
  std::uint32_t best = 0;
  double best_dist = INFINITY;
  for (std::int64_t j = guess - 1; j <= guess + 2; ++j) {
    if (j < 0 || j > static_cast<std::int64_t>(mid_)) continue;
    const double lv = static_cast<double>(j) / static_cast<double>(mid_);
    const double dist = std::abs(a - lv);
    // <= keeps the larger magnitude on ties
    if (dist <= best_dist) {
      best_dist = dist;
      best = static_cast<std::uint32_t>(j);
    }
  }
  return std::signbit(y) ? mid_ - best : mid_ + best;
}

QuantizedTensor quantize_midpoint(const Tensor& x, int bits) {
  const MidpointGrid grid(bits);
  QuantizedTensor q;
  q.bits = bits;
  q.scale = norm(x, NormKind::linf);
  q.codes.assign(x.size(), grid.zero_code());
  if (q.scale == 0.0) return q;
  for (std::size_t i = 0; i < x.size(); ++i) {
    q.codes[i] = grid.nearest(x[i] / q.scale);
  }
  return q;
}

QuantizedTensor quantize_ternary(const Tensor& x) {
  QuantizedTensor q;
  q.bits = 2;
  q.scale = norm(x, NormKind::linf);
  q.codes.assign(x.size(), 1);
  if (q.scale == 0.0) return q;
  const double threshold = q.scale / 2.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > threshold) {
      q.codes[i] = 2;
    } else if (x[i] < -threshold) {
      q.codes[i] = 0;
    }
  }
  return q;
}

void validate(const QuantizedTensor& q) {
  if (q.bits < kMinBits || q.bits > kMaxBits) {
    throw CorruptionError("bit width " + std::to_string(q.bits) + " out of range");
  }
  if (!std::isfinite(q.scale) || q.scale < 0.0) throw CorruptionError("invalid scale");
  const MidpointGrid grid(q.bits);
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    if (q.codes[i] > grid.max_code()) {
      throw CorruptionError("code " + std::to_string(q.codes[i]) + " at index " + std::to_string(i) +
                            " exceeds " + std::to_string(grid.max_code()));
    }
    if (q.scale == 0.0 && q.codes[i] != grid.zero_code()) {
      throw CorruptionError("zero-scale tensor with non-zero code at index " + std::to_string(i));
    }
  }
}

Tensor dequantize(const QuantizedTensor& q) {
  validate(q);
  const MidpointGrid grid(q.bits);
  std::vector<double> out(q.codes.size());
  for (std::size_t i = 0; i < q.codes.size(); ++i) out[i] = q.scale * grid.level(q.codes[i]);
  return Tensor(std::move(out));
}

double contraction_factor(const Tensor& x, const Tensor& approx) {
  const double denom = norm(x, NormKind::l2);
  if (denom == 0.0) throw UndefinedDeltaError("contraction factor of a zero vector");
  return 1.0 - norm(sub(x, approx), NormKind::l2) / denom;
}

double contraction_factor(const Tensor& x, const QuantizedTensor& q) {
  return contraction_factor(x, dequantize(q));
}

Tensor unpack(const Packet& p) {
  if (const auto* t = std::get_if<Tensor>(&p)) return *t;
  return dequantize(std::get<QuantizedTensor>(p));
}

std::size_t packet_length(const Packet& p) {
  return std::visit([](const auto& v) { return v.size(); }, p);
}

Quantizer Quantizer::identity(QuantizerRole role) { return {QuantizerMode::identity, role, 64}; }

Quantizer Quantizer::ternary(QuantizerRole role) { return {QuantizerMode::ternary, role, 2}; }

Quantizer Quantizer::midpoint(int bits, QuantizerRole role) {
  require_bits(bits);
  return {QuantizerMode::midpoint, role, bits};
}

Quantizer Quantizer::parse(const std::string& spec, QuantizerRole role) {
  if (spec == "fp" || spec == "identity") return identity(role);
  if (spec == "ternary") return ternary(role);
  int bits = 0;
  const auto* end = spec.data() + spec.size();
  const auto [ptr, ec] = std::from_chars(spec.data(), end, bits);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("quantizer must be 'fp', 'ternary' or a bit width, got '" + spec + "'");
  }
  return midpoint(bits, role);
}

Packet Quantizer::encode(const Tensor& x) const {
  switch (mode_) {
    case QuantizerMode::identity:
      return x;
    case QuantizerMode::ternary:
      return quantize_ternary(x);
    case QuantizerMode::midpoint:
      return quantize_midpoint(x, bits_);
  }
  return x;
}

std::string Quantizer::describe() const {
  switch (mode_) {
    case QuantizerMode::identity:
      return "fp";
    case QuantizerMode::ternary:
      return "ternary";
    case QuantizerMode::midpoint:
      return std::to_string(bits_);
  }
  return "?";
}

}  // namespace qadam
