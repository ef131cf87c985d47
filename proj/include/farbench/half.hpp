//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace farbench {

/// IEEE 754 binary16 bit pattern: 1 sign, 5 exponent, 10 mantissa bits.
struct Fp16 {
  std::uint16_t bits = 0;

  constexpr Fp16() = default;
  constexpr explicit Fp16(std::uint16_t b) : bits(b) {}

  friend constexpr bool operator==(Fp16, Fp16) = default;
};

/// Arithmetic options shared by every binary16 operation. Rounding is always
/// round-to-nearest-even.
struct Fp16Mode {
  bool flush_to_zero = false;
};

inline constexpr std::uint16_t kFp16SignMask = 0x8000;
inline constexpr std::uint16_t kFp16ExpMask = 0x7C00;
inline constexpr std::uint16_t kFp16FracMask = 0x03FF;
inline constexpr Fp16 kFp16Zero{0x0000};
inline constexpr Fp16 kFp16One{0x3C00};
inline constexpr Fp16 kFp16PosInf{0x7C00};
inline constexpr Fp16 kFp16CanonicalNaN{0x7E00};

constexpr bool is_nan(Fp16 w) {
  return (w.bits & kFp16ExpMask) == kFp16ExpMask && (w.bits & kFp16FracMask) != 0;
}
constexpr bool is_inf(Fp16 w) {
  return (w.bits & 0x7FFF) == kFp16ExpMask;
}
constexpr bool is_finite(Fp16 w) {
  return (w.bits & kFp16ExpMask) != kFp16ExpMask;
}
constexpr bool is_zero(Fp16 w) {
  return (w.bits & 0x7FFF) == 0;
}
constexpr bool is_subnormal(Fp16 w) {
  return (w.bits & kFp16ExpMask) == 0 && (w.bits & kFp16FracMask) != 0;
}
constexpr bool sign_bit(Fp16 w) {
  return (w.bits & kFp16SignMask) != 0;
}

/// Exact decode to double.
inline double to_double(Fp16 w) {
  const int exp = (w.bits >> 10) & 0x1F;
  const int frac = w.bits & kFp16FracMask;
  double mag;
  if (exp == 0x1F) {
    mag = frac != 0 ? std::numeric_limits<double>::quiet_NaN()
                    : std::numeric_limits<double>::infinity();
  } else if (exp == 0) {
    mag = std::ldexp(static_cast<double>(frac), -24);
  } else {
    mag = std::ldexp(static_cast<double>(frac | 0x400), exp - 25);
  }
  return sign_bit(w) ? -mag : mag;
}

namespace detail {

// Rounds (-1)^negative * sig * 2^exp2 to binary16, round-to-nearest-even.
constexpr std::uint16_t round_pack(bool negative, std::uint64_t sig, int exp2,
                                   bool flush_to_zero) {
  const std::uint16_t sign = negative ? kFp16SignMask : 0;
  if (sig == 0) return sign;

  const int msb = 63 - std::countl_zero(sig);
  const int top = msb + exp2;
  int quantum = top < -14 ? -24 : top - 10;

  std::uint64_t m;
  if (quantum > exp2) {
    const int shift = quantum - exp2;
    if (shift > 64) {
      m = 0;
    } else if (shift == 64) {
      m = sig > (std::uint64_t{1} << 63) ? 1 : 0;
    } else {
      m = sig >> shift;
      const std::uint64_t rem = sig & ((std::uint64_t{1} << shift) - 1);
      const std::uint64_t half = std::uint64_t{1} << (shift - 1);
      if (rem > half || (rem == half && (m & 1))) ++m;
    }
  } else {
    m = sig << (exp2 - quantum);
  }

  if (m >= 2048) {
    m >>= 1;
    ++quantum;
  }
  if (m >= 1024) {
    const int biased = quantum + 25;
    if (biased >= 31) return sign | kFp16ExpMask;
    return static_cast<std::uint16_t>(sign | (biased << 10) | (m - 1024));
  }
  if (flush_to_zero) return sign;
  return static_cast<std::uint16_t>(sign | m);
}

struct Unpacked {
  bool negative;
  std::uint32_t sig;  // value = sig * 2^exp2
  int exp2;
};

constexpr Unpacked unpack_finite(Fp16 w, bool flush_to_zero) {
  const int exp = (w.bits >> 10) & 0x1F;
  const std::uint32_t frac = w.bits & kFp16FracMask;
  if (exp == 0) return {sign_bit(w), flush_to_zero ? 0u : frac, -24};
  return {sign_bit(w), frac | 0x400u, exp - 25};
}

}  // namespace detail

/// Round-to-nearest-even encoding of a real. NaN maps to the canonical quiet
/// NaN; overflow saturates to infinity.
inline Fp16 fp16_from_real(double x, Fp16Mode mode = {}) {
  if (std::isnan(x)) return kFp16CanonicalNaN;
  const bool negative = std::signbit(x);
  if (std::isinf(x)) return Fp16(negative ? 0xFC00 : 0x7C00);
  if (x == 0.0) return Fp16(negative ? 0x8000 : 0x0000);
  int e = 0;
  const double f = std::frexp(std::fabs(x), &e);
  const auto sig = static_cast<std::uint64_t>(std::ldexp(f, 53));
  return Fp16(detail::round_pack(negative, sig, e - 53, mode.flush_to_zero));
}

inline Fp16 fp16_mul(Fp16 a, Fp16 b, Fp16Mode mode = {}) {
  if (is_nan(a) || is_nan(b)) return kFp16CanonicalNaN;
  const bool negative = sign_bit(a) != sign_bit(b);
  if (is_inf(a) || is_inf(b)) {
    const Fp16 other = is_inf(a) ? b : a;
    if (!is_inf(other) && detail::unpack_finite(other, mode.flush_to_zero).sig == 0) return kFp16CanonicalNaN;
    return Fp16(static_cast<std::uint16_t>((negative ? kFp16SignMask : 0) | kFp16ExpMask));
  }
  const auto ua = detail::unpack_finite(a, mode.flush_to_zero);
  const auto ub = detail::unpack_finite(b, mode.flush_to_zero);
  const std::uint64_t product = std::uint64_t{ua.sig} * ub.sig;
  return Fp16(detail::round_pack(negative, product, ua.exp2 + ub.exp2, mode.flush_to_zero));
}

inline Fp16 fp16_add(Fp16 a, Fp16 b, Fp16Mode mode = {}) {
  if (is_nan(a) || is_nan(b)) return kFp16CanonicalNaN;
  if (is_inf(a) || is_inf(b)) {
    if (is_inf(a) && is_inf(b) && sign_bit(a) != sign_bit(b)) return kFp16CanonicalNaN;
    return is_inf(a) ? a : b;
  }
  const auto ua = detail::unpack_finite(a, mode.flush_to_zero);
  const auto ub = detail::unpack_finite(b, mode.flush_to_zero);
  const int base = ua.exp2 < ub.exp2 ? ua.exp2 : ub.exp2;
  // Exponents span at most 29 binades, so the aligned sum fits in 41 bits.
  const std::int64_t va = static_cast<std::int64_t>(ua.sig) << (ua.exp2 - base);
  const std::int64_t vb = static_cast<std::int64_t>(ub.sig) << (ub.exp2 - base);
  const std::int64_t sum = (ua.negative ? -va : va) + (ub.negative ? -vb : vb);
  if (sum == 0) {
    return Fp16(ua.negative && ub.negative ? 0x8000 : 0x0000);
  }
  const bool negative = sum < 0;
  const auto magnitude = static_cast<std::uint64_t>(negative ? -sum : sum);
  return Fp16(detail::round_pack(negative, magnitude, base, mode.flush_to_zero));
}

/// Inverts bit `pos` (0 = mantissa LSB, 15 = sign).
inline Fp16 flip_bit(Fp16 w, unsigned pos) {
  if (pos > 15) throw std::out_of_range("flip_bit: bit position " + std::to_string(pos) + " outside 0..15");
  return Fp16(static_cast<std::uint16_t>(w.bits ^ (1u << pos)));
}

/// decode(flip_bit(w, pos)) - decode(w); nullopt when either side is NaN.
inline std::optional<double> fp16_value_delta(Fp16 w, unsigned pos) {
  const Fp16 flipped = flip_bit(w, pos);
  if (is_nan(w) || is_nan(flipped)) return std::nullopt;
  return to_double(flipped) - to_double(w);
}

/// Balanced adjacent-pair reduction (level 0 pairs lanes 2i and 2i+1). The
/// input size must be a power of two.
inline Fp16 fp16_tree_sum(std::span<const Fp16> values, Fp16Mode mode = {}) {
  const std::size_t n = values.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fp16_tree_sum: size must be a power of two");
  auto reduce = [&](Fp16* level) {
    for (std::size_t width = n; width > 1; width /= 2) {
      for (std::size_t i = 0; i < width / 2; ++i) {
        level[i] = fp16_add(level[2 * i], level[2 * i + 1], mode);
      }
    }
    return level[0];
  };
  if (n <= 64) {
    std::array<Fp16, 64> scratch;
    std::copy(values.begin(), values.end(), scratch.begin());
    return reduce(scratch.data());
  }
  std::vector<Fp16> scratch(values.begin(), values.end());
  return reduce(scratch.data());
}

/// Multiplies `lanes`-wide chunks of (activation, weight) pairs, tree-reduces
/// each chunk and accumulates chunk partials in ascending order. Missing lanes
/// of the final chunk contribute +0 products.
inline Fp16 fp16_tiled_dot(std::span<const Fp16> activations, std::span<const Fp16> weights,
                           std::size_t lanes = 32, Fp16Mode mode = {}) {
  if (activations.size() != weights.size()) throw std::invalid_argument("fp16_tiled_dot: length mismatch");
  const std::size_t k = activations.size();
  if (k == 0) return kFp16Zero;
  std::vector<Fp16> products(lanes);
  Fp16 acc = kFp16Zero;
  for (std::size_t base = 0; base < k; base += lanes) {
    for (std::size_t l = 0; l < lanes; ++l) {
      products[l] = base + l < k ? fp16_mul(activations[base + l], weights[base + l], mode)
                                 : fp16_mul(kFp16Zero, kFp16Zero, mode);
    }
    const Fp16 partial = fp16_tree_sum(products, mode);
    acc = base == 0 ? partial : fp16_add(acc, partial, mode);
  }
  return acc;
}

inline std::vector<Fp16> to_fp16(std::span<const double> xs, Fp16Mode mode = {}) {
  std::vector<Fp16> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(fp16_from_real(x, mode));
  return out;
}

inline std::vector<double> to_double(std::span<const Fp16> ws) {
  std::vector<double> out;
  out.reserve(ws.size());
  for (Fp16 w : ws) out.push_back(to_double(w));
  return out;
}

}  // namespace farbench
