#pragma once

// Independent reference implementations used only by tests. Nothing here
// calls into the library's GEMM, im2col or basis code.

#include <harmonic/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace oracle {

using harmonic::Shape;
using harmonic::Tensor;

/// Plain six-deep loop cross-correlation, accumulating (c, kx, ky) in order.
template <typename T>
Tensor<T> naive_conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t m = w.dim(0), k = w.dim(2);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor<T> out({n, m, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < m; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          T acc = 0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t kx = 0; kx < k; ++kx)
              for (std::size_t ky = 0; ky < k; ++ky) {
                const auto yy = static_cast<std::ptrdiff_t>(i * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                const auto xx = static_cast<std::ptrdiff_t>(j * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
                    xx >= static_cast<std::ptrdiff_t>(wd))
                  continue;
                acc += x.at(b, ch, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) *
                       w.at(o, ch, kx, ky);
              }
          out.at(b, o, i, j) = acc;
        }
  return out;
}

/// Two-pass mean / biased variance per channel.
inline std::pair<std::vector<double>, std::vector<double>> two_pass_moments(const Tensor<double>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i) mean[ch] += x[(b * c + ch) * hw + i];
    mean[ch] /= static_cast<double>(n * hw);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = x[(b * c + ch) * hw + i] - mean[ch];
        var[ch] += d * d;
      }
    var[ch] /= static_cast<double>(n * hw);
  }
  return {mean, var};
}

/// DCT-II filter value straight from the cosine formula.
inline double dct_filter_value(std::size_t k, std::size_t u, std::size_t v, std::size_t x, std::size_t y) {
  const double au = u == 0 ? 1.0 : 2.0, av = v == 0 ? 1.0 : 2.0;
  const double kd = static_cast<double>(k);
  return std::sqrt(au / kd) * std::sqrt(av / kd) *
         std::cos(std::numbers::pi / kd * (static_cast<double>(x) + 0.5) * static_cast<double>(u)) *
         std::cos(std::numbers::pi / kd * (static_cast<double>(y) + 0.5) * static_cast<double>(v));
}

struct FreqUV {
  std::size_t u, v;
};

/// Literal harmonic feature map: out[m] = sum_n sum_(u,v) w[m][n][uv] (psi_uv ** x_n) + b[m],
/// with psi evaluated from the cosine formula (orthonormal).
template <typename T>
Tensor<double> literal_harmonic(const Tensor<T>& x, const Tensor<T>& w, const std::vector<FreqUV>& freqs,
                                std::size_t k, std::size_t stride, std::size_t pad, const Tensor<T>* bias) {
  const std::size_t nb = x.dim(0), n = x.dim(1), h = x.dim(2), wd = x.dim(3), m = w.dim(0);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> out({nb, m, ho, wo});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t o = 0; o < m; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
          for (std::size_t ch = 0; ch < n; ++ch)
            for (std::size_t q = 0; q < freqs.size(); ++q) {
              double resp = 0.0;
              for (std::size_t kx = 0; kx < k; ++kx)
                for (std::size_t ky = 0; ky < k; ++ky) {
                  const auto yy = static_cast<std::ptrdiff_t>(i * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                  const auto xx = static_cast<std::ptrdiff_t>(j * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                  if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
                      xx >= static_cast<std::ptrdiff_t>(wd))
                    continue;
                  resp += static_cast<double>(x.at(b, ch, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx))) *
                          dct_filter_value(k, freqs[q].u, freqs[q].v, kx, ky);
                }
              acc += static_cast<double>(w.at(o, ch, q)) * resp;
            }
          out.at(b, o, i, j) = acc;
        }
  return out;
}

/// Scalar that counts every multiplication it takes part in.
struct Counted {
  double value = 0.0;
  static inline std::uint64_t multiplies = 0;

  Counted() = default;
  Counted(double v) : value(v) {}  // NOLINT(google-explicit-constructor)
  friend Counted operator*(Counted a, Counted b) {
    ++multiplies;
    return Counted(a.value * b.value);
  }
  Counted& operator+=(Counted o) {
    value += o.value;
    return *this;
  }
};

struct CountedTensor {
  Shape shape;
  std::vector<Counted> data;
};

/// Reference two-stage block over counted scalars: a K x K depthwise
/// correlation with every retained filter (every tap counted, padded or not),
/// then the 1x1 combination. Returns the output; Counted::multiplies holds
/// the multiply-add count.
inline std::vector<Counted> counted_twostage(std::size_t n, std::size_t m, std::size_t k,
                                             std::size_t h, std::size_t w, std::size_t stride,
                                             std::size_t pad, std::size_t p) {
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  std::vector<Counted> input(n * h * w, Counted(1.0)), filt(p * k * k, Counted(0.5)),
      weights(m * n * p, Counted(0.25));
  std::vector<Counted> stage1(n * p * ho * wo);
  auto px = [&](std::size_t c, std::ptrdiff_t yy, std::ptrdiff_t xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(w))
      return Counted(0.0);
    return input[(c * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)];
  };
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t q = 0; q < p; ++q)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          Counted acc;
          for (std::size_t kx = 0; kx < k; ++kx)
            for (std::size_t ky = 0; ky < k; ++ky)
              acc += filt[(q * k + kx) * k + ky] *
                     px(c, static_cast<std::ptrdiff_t>(i * stride + kx) - static_cast<std::ptrdiff_t>(pad),
                        static_cast<std::ptrdiff_t>(j * stride + ky) - static_cast<std::ptrdiff_t>(pad));
          stage1[((c * p + q) * ho + i) * wo + j] = acc;
        }
  std::vector<Counted> out(m * ho * wo);
  for (std::size_t o = 0; o < m; ++o)
    for (std::size_t pos = 0; pos < ho * wo; ++pos) {
      Counted acc;
      for (std::size_t c = 0; c < n * p; ++c) acc += weights[o * n * p + c] * stage1[c * ho * wo + pos];
      out[o * ho * wo + pos] = acc;
    }
  return out;
}

/// Reference merged block over counted scalars: filter synthesis followed by a
/// dense K x K convolution.
inline std::vector<Counted> counted_merged(std::size_t n, std::size_t m, std::size_t k, std::size_t h,
                                           std::size_t w, std::size_t stride, std::size_t pad,
                                           std::size_t p) {
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  std::vector<Counted> input(n * h * w, Counted(1.0)), filt(p * k * k, Counted(0.5)),
      weights(m * n * p, Counted(0.25));
  std::vector<Counted> g(m * n * k * k);
  for (std::size_t o = 0; o < m; ++o)
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t r = 0; r < k * k; ++r) {
        Counted acc;
        for (std::size_t q = 0; q < p; ++q) acc += weights[(o * n + c) * p + q] * filt[q * k * k + r];
        g[(o * n + c) * k * k + r] = acc;
      }
  std::vector<Counted> out(m * ho * wo);
  for (std::size_t o = 0; o < m; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        Counted acc;
        for (std::size_t c = 0; c < n; ++c)
          for (std::size_t kx = 0; kx < k; ++kx)
            for (std::size_t ky = 0; ky < k; ++ky) {
              const auto yy = static_cast<std::ptrdiff_t>(i * stride + kx) - static_cast<std::ptrdiff_t>(pad);
              const auto xx = static_cast<std::ptrdiff_t>(j * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<std::ptrdiff_t>(h) &&
                                  xx < static_cast<std::ptrdiff_t>(w);
              const Counted v = inside ? input[(c * h + static_cast<std::size_t>(yy)) * w +
                                               static_cast<std::size_t>(xx)]
                                       : Counted(0.0);
              acc += g[((o * n + c) * k + kx) * k + ky] * v;
            }
        out[(o * ho + i) * wo + j] = acc;
      }
  return out;
}

}  // namespace oracle
