#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedsim/architecture.hpp"

namespace fedsim {

enum class WireDtype : uint8_t { kF32 = 0, kF64 = 1 };

// CRC-32 (IEEE 802.3), reflected, init and xorout 0xFFFFFFFF.
uint32_t crc32(std::span<const uint8_t> bytes);

// Canonical parameter blob, all integers little-endian:
//   magic "FEDW" | version u16 = 1 | dtype u8 | entry_count u32 |
//   per entry: name_len u16, name bytes, ndim u8, dims u32 each, raw elements |
//   crc32 u32 over everything preceding it.
std::vector<uint8_t> encode_params(const ParamSet& params, WireDtype dtype);

// Inverse of encode_params; F32 payloads widen to 64-bit floats. Malformed
// input throws DecodeError with a distinct kind, never crashes.
ParamSet decode_params(std::span<const uint8_t> blob);

// Exact byte length encode_params will produce.
size_t encoded_size(const ParamSet& params, WireDtype dtype);

}  // namespace fedsim
