// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>

namespace samo {

namespace detail {

// binary32 -> binary16 with round-to-nearest-even, done in integer
// arithmetic so the result does not depend on the FPU rounding mode.
inline std::uint16_t float_to_half_bits(float value) {
  const std::uint32_t w = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = (w >> 16) & 0x8000u;
  const std::uint32_t abs = w & 0x7FFFFFFFu;

  if (abs >= 0x7F800000u) {  // inf / NaN
    // NaN keeps the top payload bits; the quiet bit is forced so the
    // payload can never truncate to zero (which would turn NaN into inf).
    const std::uint32_t payload =
        (abs > 0x7F800000u) ? (0x0200u | ((abs >> 13) & 0x03FFu)) : 0u;
    return static_cast<std::uint16_t>(sign | 0x7C00u | payload);
  }
  if (abs >= 0x47800000u) {  // 2^16 and above: past the largest finite half
    return static_cast<std::uint16_t>(sign | 0x7C00u);
  }
  if (abs >= 0x38800000u) {  // normal half range, 2^-14 and above
    // Re-bias the exponent (127 -> 15) and round the 13 dropped bits.
    // A mantissa carry propagates into the exponent, which also handles
    // values in [65520, 65536) rounding up to infinity.
    std::uint32_t bits = (abs >> 13) - (112u << 10);
    const std::uint32_t rem = abs & 0x1FFFu;
    bits += (rem > 0x1000u) || (rem == 0x1000u && (bits & 1u));
    return static_cast<std::uint16_t>(sign | bits);
  }
  if (abs < 0x33000000u) {  // below 2^-25: underflows to signed zero
    return static_cast<std::uint16_t>(sign);
  }
  // Subnormal half: shift the 24-bit significand into a 10-bit field.
  const std::uint32_t mant = (abs & 0x007FFFFFu) | 0x00800000u;
  const std::uint32_t shift = 126u - (abs >> 23);  // in [14, 24]
  std::uint32_t q = mant >> shift;
  const std::uint32_t rem = mant & ((1u << shift) - 1u);
  const std::uint32_t halfway = 1u << (shift - 1u);
  q += (rem > halfway) || (rem == halfway && (q & 1u));
  // q may round up to 0x0400 == smallest normal; the encoding is still right.
  return static_cast<std::uint16_t>(sign | q);
}

// binary16 -> binary32, exact for every input.
inline float half_bits_to_float(std::uint16_t h) {
  const std::uint32_t sign = (static_cast<std::uint32_t>(h) & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  const std::uint32_t mant = h & 0x3FFu;

  if (exp == 0x1Fu) {  // inf / NaN
    return std::bit_cast<float>(sign | 0x7F800000u | (mant << 13));
  }
  if (exp == 0u) {
    if (mant == 0u) {
      return std::bit_cast<float>(sign);
    }
    // Normalize the subnormal: value == mant * 2^-24.
    const int top = 31 - std::countl_zero(mant);  // highest set bit, 0..9
    const std::uint32_t fexp = static_cast<std::uint32_t>(top + 103) << 23;
    const std::uint32_t fmant = (mant << (23 - top)) & 0x007FFFFFu;
    return std::bit_cast<float>(sign | fexp | fmant);
  }
  return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

}  // namespace detail

// IEEE 754 binary16 value emulated in software. Arithmetic is done by
// widening to float; operator== compares the bit pattern (so -0 != +0 and
// NaN == NaN here -- the type is a storage format, not a numeric tower).
class Half {
 public:
  constexpr Half() = default;
  explicit Half(float value) : bits_(detail::float_to_half_bits(value)) {}

  static constexpr Half from_bits(std::uint16_t bits) {
    Half h;
    h.bits_ = bits;
    return h;
  }

  explicit operator float() const { return detail::half_bits_to_float(bits_); }

  constexpr std::uint16_t bits() const { return bits_; }

  bool is_finite() const { return (bits_ & 0x7C00u) != 0x7C00u; }
  bool is_nan() const {
    return (bits_ & 0x7C00u) == 0x7C00u && (bits_ & 0x03FFu) != 0u;
  }

  friend constexpr bool operator==(Half a, Half b) { return a.bits_ == b.bits_; }
  friend constexpr bool operator!=(Half a, Half b) { return a.bits_ != b.bits_; }

 private:
  std::uint16_t bits_ = 0;
};

inline float to_float(Half h) { return static_cast<float>(h); }
inline constexpr float to_float(float f) { return f; }

template <typename T>
T from_float(float f);

template <>
inline Half from_float<Half>(float f) {
  return Half(f);
}
template <>
inline constexpr float from_float<float>(float f) {
  return f;
}

}  // namespace samo
