#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qadam/quantize.hpp"

namespace qadam::wire {

// Frame layout, all integers little-endian:
//
//   offset  size  field
//   0       4     magic "QT01"
//   4       1     k (bit width, 2..32)
//   5       4     len (number of codes, u32)
//   9       8     scale (IEEE-754 binary64)
//   17      ...   ceil(len * k / 8) bytes of codes, LSB first
//
// Code j occupies bits [j*k, (j+1)*k) of the payload viewed as one
// little-endian bit string. Pad bits after the last code are zero.
inline constexpr std::size_t kHeaderBytes = 17;
inline constexpr std::uint8_t kMagic[4] = {'Q', 'T', '0', '1'};

std::size_t payload_bytes(std::uint64_t len, int bits);
std::size_t frame_bytes(std::uint64_t len, int bits);

// Size in bits of a frame carrying len codes of width bits: 136 header bits
// plus the byte-rounded payload.
std::uint64_t bits_for_message(std::uint64_t len, int bits);

// Bits a packet costs on the link. Full-precision packets are counted at 64
// bits per coordinate with no header.
std::uint64_t packet_bits(const Packet& p);

std::vector<std::uint8_t> encode(const QuantizedTensor& q);

// Throws FormatError (bad magic or bit width), LengthError (truncated or
// trailing bytes), CorruptionError (code out of range, non-zero pad bits,
// invalid scale).
QuantizedTensor decode(std::span<const std::uint8_t> bytes);

}  // namespace qadam::wire
