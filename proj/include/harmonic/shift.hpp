#pragma once

#include <harmonic/error.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace harmonic {

/// Unnormalized 1-D DCT-II coefficient: sum_n x_n cos(pi/N (n + 1/2) k).
inline double dct1d(std::span<const double> x, std::size_t k) {
  const std::size_t n = x.size();
  if (k >= n) throw InvalidArgument("dct1d: k=" + std::to_string(k) + " outside [0, " +
                                    std::to_string(n) + ")");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += x[i] * std::cos(std::numbers::pi / static_cast<double>(n) *
                           (static_cast<double>(i) + 0.5) * static_cast<double>(k));
  }
  return acc;
}

/// Sine counterpart of dct1d.
inline double dst1d(std::span<const double> x, std::size_t k) {
  const std::size_t n = x.size();
  if (k >= n) throw InvalidArgument("dst1d: k=" + std::to_string(k) + " outside [0, " +
                                    std::to_string(n) + ")");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += x[i] * std::sin(std::numbers::pi / static_cast<double>(n) *
                           (static_cast<double>(i) + 0.5) * static_cast<double>(k));
  }
  return acc;
}

/// Reduced fraction with positive denominator.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t num, std::int64_t den) {
    if (den == 0) throw InvalidArgument("rational with zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    return {num / (g ? g : 1), den / (g ? g : 1)};
  }

  bool is_integer() const noexcept { return den == 1; }
  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const {
    return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
  }
  bool operator==(const Rational&) const = default;
};

/// Pixel shift turning the cosine filter at frequency k into its sine
/// counterpart: delta = N (1 + 4z) / (2k).
inline Rational sine_shift_delta(std::int64_t n, std::int64_t k, std::int64_t z) {
  if (k == 0) throw InvalidArgument("sine_shift_delta: k=0 (DC) has no sine counterpart");
  if (n < 1 || k < 0) throw InvalidArgument("sine_shift_delta: need N >= 1 and k >= 1");
  return Rational::make(n * (1 + 4 * z), 2 * k);
}

/// Samples of a signal on the integer range [origin, origin + values.size()).
struct ExtendedSignal {
  std::int64_t origin = 0;
  std::vector<double> values;

  std::int64_t begin() const noexcept { return origin; }
  std::int64_t end() const noexcept { return origin + static_cast<std::int64_t>(values.size()); }
  double at(std::int64_t i) const {
    if (i < begin() || i >= end()) {
      throw InvalidArgument("extended signal has no sample at index " + std::to_string(i) +
                            " (support [" + std::to_string(begin()) + ", " +
                            std::to_string(end()) + "))");
    }
    return values[static_cast<std::size_t>(i - origin)];
  }
  std::vector<double> window(std::int64_t start, std::size_t n) const {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = at(start + static_cast<std::int64_t>(i));
    return w;
  }
};

/// Extends base (length N) over [lo, hi) with x[m + N] = (-1)^k x[m]: plain
/// N-periodic for even k, anti-periodic (period 2N) for odd k. This is the
/// extension on which the shifted-cosine identity holds exactly.
inline ExtendedSignal parity_periodic_extension(std::span<const double> base, std::size_t k,
                                                std::int64_t lo, std::int64_t hi) {
  const auto n = static_cast<std::int64_t>(base.size());
  if (n < 1 || hi <= lo) throw InvalidArgument("parity_periodic_extension: empty range");
  ExtendedSignal s{lo, {}};
  s.values.reserve(static_cast<std::size_t>(hi - lo));
  for (std::int64_t m = lo; m < hi; ++m) {
    const std::int64_t q = (m >= 0) ? m / n : -((-m + n - 1) / n);
    const std::int64_t r = m - q * n;
    const bool flip = (k % 2 == 1) && (q % 2 != 0);
    s.values.push_back(flip ? -base[static_cast<std::size_t>(r)] : base[static_cast<std::size_t>(r)]);
  }
  return s;
}

struct ShiftCheck {
  Rational delta;
  double sine = 0.0;            // dst1d on [0, N)
  double shifted_cosine = 0.0;  // dct1d on [delta, delta + N)
  double residual = 0.0;
};

/// Compares the sine coefficient of x on [0, N) with the cosine coefficient of
/// x shifted by delta. Non-integer shifts are rejected.
inline ShiftCheck verify_shift_equivalence(const ExtendedSignal& x, std::size_t n, std::size_t k,
                                           std::int64_t z) {
  const Rational delta =
      sine_shift_delta(static_cast<std::int64_t>(n), static_cast<std::int64_t>(k), z);
  if (!delta.is_integer()) {
    throw InvalidArgument("shift delta = " + delta.str() + " is not an integer pixel shift");
  }
  if (k >= n) throw InvalidArgument("verify_shift_equivalence: k must be < N");
  ShiftCheck out;
  out.delta = delta;
  const auto base = x.window(0, n);
  const auto shifted = x.window(delta.num, n);
  out.sine = dst1d(base, k);
  out.shifted_cosine = dct1d(shifted, k);
  out.residual = std::abs(out.sine - out.shifted_cosine);
  return out;
}

}  // namespace harmonic
