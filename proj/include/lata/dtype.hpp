#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string_view>

#include "lata/error.hpp"

namespace lata {

enum class Dtype : std::uint8_t { F32, F16, BF16 };

constexpr std::size_t element_size(Dtype dt) {
  switch (dt) {
    case Dtype::F32: return 4;
    case Dtype::F16: return 2;
    case Dtype::BF16: return 2;
  }
  return 0;
}

constexpr std::string_view dtype_name(Dtype dt) {
  switch (dt) {
    case Dtype::F32: return "F32";
    case Dtype::F16: return "F16";
    case Dtype::BF16: return "BF16";
  }
  return "?";
}

inline std::optional<Dtype> parse_dtype(std::string_view tag) {
  if (tag == "F32") return Dtype::F32;
  if (tag == "F16") return Dtype::F16;
  if (tag == "BF16") return Dtype::BF16;
  return std::nullopt;
}

// IEEE binary16 -> binary32, exact for every input.
inline float f16_to_f32(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  const std::uint32_t mant = h & 0x3ffu;
  if (exp == 0) {
    // zero or subnormal: mant * 2^-24 is exactly representable in binary32
    const float mag = static_cast<float>(mant) * 0x1p-24f;
    return sign ? -mag : mag;
  }
  if (exp == 31) {
    return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  }
  return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

// binary32 -> binary16 with round-to-nearest-even; NaN becomes the quiet NaN 0x7e00.
inline std::uint16_t f32_to_f16(float value) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = bits & 0x80000000u;
  bits ^= sign;
  std::uint32_t out = 0;
  if (bits >= (127u + 16u) << 23) {
    out = bits > 0x7f800000u ? 0x7e00u : 0x7c00u;
  } else if (bits < (113u << 23)) {
    // subnormal or zero in half: let the FPU round by adding a magic denormal
    const std::uint32_t magic_bits = ((127u - 15u) + (23u - 10u) + 1u) << 23;
    const float sum = std::bit_cast<float>(bits) + std::bit_cast<float>(magic_bits);
    out = std::bit_cast<std::uint32_t>(sum) - magic_bits;
  } else {
    const std::uint32_t mant_odd = (bits >> 13) & 1u;
    bits += (static_cast<std::uint32_t>(15 - 127) << 23) + 0xfffu;
    bits += mant_odd;
    out = bits >> 13;
  }
  return static_cast<std::uint16_t>(out | (sign >> 16));
}

inline float bf16_to_f32(std::uint16_t h) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

inline std::uint16_t f32_to_bf16(float value) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  if ((bits & 0x7fffffffu) > 0x7f800000u) {
    return static_cast<std::uint16_t>((bits >> 16) | 0x0040u);
  }
  const std::uint32_t rounding = 0x7fffu + ((bits >> 16) & 1u);
  return static_cast<std::uint16_t>((bits + rounding) >> 16);
}

// Little-endian element access over raw tensor bytes. The host is assumed little-endian.
static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline float load_element(Dtype dt, const std::byte* src) {
  switch (dt) {
    case Dtype::F32: {
      float v;
      std::memcpy(&v, src, 4);
      return v;
    }
    case Dtype::F16: {
      std::uint16_t h;
      std::memcpy(&h, src, 2);
      return f16_to_f32(h);
    }
    case Dtype::BF16: {
      std::uint16_t h;
      std::memcpy(&h, src, 2);
      return bf16_to_f32(h);
    }
  }
  return 0.0f;
}

inline void store_element(Dtype dt, float value, std::byte* dst) {
  switch (dt) {
    case Dtype::F32:
      std::memcpy(dst, &value, 4);
      return;
    case Dtype::F16: {
      const std::uint16_t h = f32_to_f16(value);
      std::memcpy(dst, &h, 2);
      return;
    }
    case Dtype::BF16: {
      const std::uint16_t h = f32_to_bf16(value);
      std::memcpy(dst, &h, 2);
      return;
    }
  }
}

// Decode a whole buffer to F32.
inline void decode_to_f32(Dtype dt, std::span<const std::byte> raw, std::span<float> out) {
  const std::size_t width = element_size(dt);
  if (raw.size() != out.size() * width) {
    throw Error(ErrorCode::invariant, "decode size mismatch");
  }
  if (dt == Dtype::F32) {
    std::memcpy(out.data(), raw.data(), raw.size());
    return;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = load_element(dt, raw.data() + i * width);
  }
}

inline void encode_from_f32(Dtype dt, std::span<const float> values, std::span<std::byte> raw) {
  const std::size_t width = element_size(dt);
  if (raw.size() != values.size() * width) {
    throw Error(ErrorCode::invariant, "encode size mismatch");
  }
  if (dt == Dtype::F32) {
    std::memcpy(raw.data(), values.data(), raw.size());
    return;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    store_element(dt, values[i], raw.data() + i * width);
  }
}

}  // namespace lata
