#include "qadam/wire.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "qadam/errors.hpp"

namespace qadam::wire {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(bytes[offset + i]) << (8 * i);
  }
  return value;
}

}  // namespace

std::size_t payload_bytes(std::uint64_t len, int bits) {
  return static_cast<std::size_t>((len * static_cast<std::uint64_t>(bits) + 7) / 8);
}

std::size_t frame_bytes(std::uint64_t len, int bits) { return kHeaderBytes + payload_bytes(len, bits); }

std::uint64_t bits_for_message(std::uint64_t len, int bits) { return 8 * frame_bytes(len, bits); }

std::uint64_t packet_bits(const Packet& p) {
  if (const auto* t = std::get_if<Tensor>(&p)) return 64 * static_cast<std::uint64_t>(t->size());
  const auto& q = std::get<QuantizedTensor>(p);
  return bits_for_message(q.size(), q.bits);
}

std::vector<std::uint8_t> encode(const QuantizedTensor& q) {
  validate(q);
  if (q.codes.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw LengthError("tensor too long for a wire frame");
  }
  std::vector<std::uint8_t> out;
  out.reserve(frame_bytes(q.codes.size(), q.bits));
  for (std::uint8_t b : kMagic) out.push_back(b);
  out.push_back(static_cast<std::uint8_t>(q.bits));
  put_le(out, static_cast<std::uint32_t>(q.codes.size()));
  put_le(out, std::bit_cast<std::uint64_t>(q.scale));

  // Bit accumulator; k <= 32 so at most 39 live bits.
  std::uint64_t acc = 0;
  int live = 0;
  for (std::uint32_t code : q.codes) {
    acc |= static_cast<std::uint64_t>(code) << live;
    live += q.bits;
    while (live >= 8) {
      out.push_back(static_cast<std::uint8_t>(acc));
      acc >>= 8;
      live -= 8;
    }
  }
  if (live > 0) out.push_back(static_cast<std::uint8_t>(acc));
  return out;
}

QuantizedTensor decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw LengthError("frame shorter than header: " + std::to_string(bytes.size()) + " bytes");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError("bad magic");
  const int bits = bytes[4];
  if (bits < kMinBits || bits > kMaxBits) {
    throw FormatError("unsupported bit width " + std::to_string(bits));
  }
  const auto len = get_le<std::uint32_t>(bytes, 5);
  const double scale = std::bit_cast<double>(get_le<std::uint64_t>(bytes, 9));
  const std::size_t expected = frame_bytes(len, bits);
  if (bytes.size() < expected) {
    throw LengthError("truncated payload: have " + std::to_string(bytes.size()) + " bytes, need " +
                      std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw LengthError("trailing bytes after payload: " + std::to_string(bytes.size() - expected));
  }

  QuantizedTensor q;
  q.bits = bits;
  q.scale = scale;
  q.codes.resize(len);
  const std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  std::uint64_t acc = 0;
  int live = 0;
  std::size_t pos = kHeaderBytes;
  for (std::uint32_t j = 0; j < len; ++j) {
    while (live < bits) {
      acc |= static_cast<std::uint64_t>(bytes[pos++]) << live;
      live += 8;
    }
    q.codes[j] = static_cast<std::uint32_t>(acc & mask);
    acc >>= bits;
    live -= bits;
  }
  if (acc != 0) throw CorruptionError("non-zero pad bits");
  validate(q);
  return q;
}

}  // namespace qadam::wire
