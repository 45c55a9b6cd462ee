#pragma once

#include <harmonic/parallel.hpp>
#include <harmonic/tensor.hpp>

#include <array>
#include <cstring>
#include <utility>

namespace harmonic {

/// Square-kernel geometry with symmetric zero padding.
struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// floor((in + 2p - K) / s) + 1, rejecting empty outputs.
  std::size_t output_extent(std::size_t in) const {
    if (kernel == 0 || stride == 0) throw InvalidArgument("kernel and stride must be positive");
    if (in + 2 * padding < kernel) {
      throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded extent " +
                       std::to_string(in + 2 * padding));
    }
    return (in + 2 * padding - kernel) / stride + 1;
  }

  bool operator==(const ConvGeometry&) const = default;
};

namespace detail {

inline void require_rank(const Shape& s, std::size_t r, const char* what) {
  if (s.size() != r) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(s));
  }
}

}  // namespace detail

/// C[M x J] = A[M x R] * B[R x J], all row-major. Each output is accumulated
/// from zero in increasing r, so results match a plain triple loop bitwise.
template <Real T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t r, std::size_t j) {
  constexpr std::size_t kColBlock = 256;
  constexpr std::size_t kRowBlock = 4;
  const std::size_t col_blocks = (j + kColBlock - 1) / kColBlock;
  const std::size_t row_blocks = (m + kRowBlock - 1) / kRowBlock;
  parallel_for(col_blocks * row_blocks, [&](std::size_t task) {
    const std::size_t j0 = (task % col_blocks) * kColBlock;
    const std::size_t m0 = (task / col_blocks) * kRowBlock;
    const std::size_t jb = std::min(kColBlock, j - j0);
    const std::size_t mb = std::min(kRowBlock, m - m0);
    alignas(64) std::array<std::array<T, kColBlock>, kRowBlock> acc{};
    if (mb == kRowBlock) {
      T* c0 = acc[0].data();
      T* c1 = acc[1].data();
      T* c2 = acc[2].data();
      T* c3 = acc[3].data();
      for (std::size_t k = 0; k < r; ++k) {
        const T* brow = b + k * j + j0;
        const T a0 = a[(m0 + 0) * r + k];
        const T a1 = a[(m0 + 1) * r + k];
        const T a2 = a[(m0 + 2) * r + k];
        const T a3 = a[(m0 + 3) * r + k];
        for (std::size_t x = 0; x < jb; ++x) {
          const T bv = brow[x];
          c0[x] += a0 * bv;
          c1[x] += a1 * bv;
          c2[x] += a2 * bv;
          c3[x] += a3 * bv;
        }
      }
    } else {
      for (std::size_t k = 0; k < r; ++k) {
        const T* brow = b + k * j + j0;
        for (std::size_t i = 0; i < mb; ++i) {
          const T av = a[(m0 + i) * r + k];
          T* ci = acc[i].data();
          for (std::size_t x = 0; x < jb; ++x) ci[x] += av * brow[x];
        }
      }
    }
    for (std::size_t i = 0; i < mb; ++i) {
      std::memcpy(c + (m0 + i) * j + j0, acc[i].data(), jb * sizeof(T));
    }
  });
}

/// Unrolls one C x H x W image into [C*K*K, Ho*Wo] patch columns.
template <Real T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w,
            const ConvGeometry& g, std::size_t ho, std::size_t wo, T* col) {
  const std::size_t k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t kx = 0; kx < k; ++kx) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        T* dst = col + ((c * k + kx) * k + ky) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + kx) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst + oy * wo, dst + (oy + 1) * wo, T(0));
            continue;
          }
          const T* src = img + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + ky) - pad;
            dst[oy * wo + ox] =
                (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

/// Scatter-adds patch columns back into a zero-initialized image (adjoint of im2col).
template <Real T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w,
                const ConvGeometry& g, std::size_t ho, std::size_t wo, T* img) {
  const std::size_t k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t kx = 0; kx < k; ++kx) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        const T* src = col + ((c * k + kx) * k + ky) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + kx) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = img + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + ky) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

/// Cross-correlation of [N,C,H,W] with [M,C,K,K] filters. Every output element
/// is reduced over (channel, kernel row, kernel column) in that order.
template <Real T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& filters, const ConvGeometry& g) {
  detail::require_rank(input.shape(), 4, "conv2d input");
  detail::require_rank(filters.shape(), 4, "conv2d filters");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t m = filters.dim(0), k = filters.dim(2);
  if (filters.dim(1) != c || filters.dim(3) != k || k != g.kernel) {
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " incompatible with filters " +
                     shape_str(filters.shape()) + " (geometry kernel " + std::to_string(g.kernel) +
                     ")");
  }
  const std::size_t ho = g.output_extent(h), wo = g.output_extent(w);
  Tensor<T> out({n, m, ho, wo});
  const std::size_t ckk = c * k * k, hw = ho * wo;
  std::vector<T> col(ckk * hw);
  for (std::size_t b = 0; b < n; ++b) {
    im2col(input.data() + b * c * h * w, c, h, w, g, ho, wo, col.data());
    gemm(filters.data(), col.data(), out.data() + b * m * hw, m, ckk, hw);
  }
  return out;
}

/// Gradient of conv2d with respect to its input.
template <Real T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& filters,
                                const ConvGeometry& g, const Shape& input_shape) {
  detail::require_rank(grad_out.shape(), 4, "conv2d_backward_input grad");
  detail::require_rank(input_shape, 4, "conv2d_backward_input input");
  const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const std::size_t m = filters.dim(0), k = g.kernel;
  const std::size_t ho = g.output_extent(h), wo = g.output_extent(w);
  if (grad_out.shape() != Shape{n, m, ho, wo} || filters.shape() != Shape{m, c, k, k}) {
    throw ShapeError("conv2d_backward_input: upstream " + shape_str(grad_out.shape()) +
                     " does not match forward output " + shape_str({n, m, ho, wo}));
  }
  const std::size_t ckk = c * k * k, hw = ho * wo;
  std::vector<T> wt(ckk * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t r = 0; r < ckk; ++r) wt[r * m + i] = filters[i * ckk + r];
  Tensor<T> grad_in(input_shape);
  std::vector<T> col(ckk * hw);
  for (std::size_t b = 0; b < n; ++b) {
    gemm(wt.data(), grad_out.data() + b * m * hw, col.data(), ckk, m, hw);
    col2im_add(col.data(), c, h, w, g, ho, wo, grad_in.data() + b * c * h * w);
  }
  return grad_in;
}

/// Gradient of conv2d with respect to its filters.
template <Real T>
Tensor<T> conv2d_backward_filter(const Tensor<T>& input, const Tensor<T>& grad_out,
                                 const ConvGeometry& g) {
  detail::require_rank(input.shape(), 4, "conv2d_backward_filter input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = g.kernel, ho = g.output_extent(h), wo = g.output_extent(w);
  if (grad_out.rank() != 4 || grad_out.dim(0) != n || grad_out.dim(2) != ho ||
      grad_out.dim(3) != wo) {
    throw ShapeError("conv2d_backward_filter: upstream " + shape_str(grad_out.shape()) +
                     " does not match input " + shape_str(input.shape()));
  }
  const std::size_t m = grad_out.dim(1), ckk = c * k * k, hw = ho * wo;
  Tensor<T> grad_w({m, c, k, k});
  std::vector<T> col(ckk * hw), colt(hw * ckk), part(m * ckk);
  for (std::size_t b = 0; b < n; ++b) {
    im2col(input.data() + b * c * h * w, c, h, w, g, ho, wo, col.data());
    for (std::size_t r = 0; r < ckk; ++r)
      for (std::size_t p = 0; p < hw; ++p) colt[p * ckk + r] = col[r * hw + p];
    gemm(grad_out.data() + b * m * hw, colt.data(), part.data(), m, hw, ckk);
    for (std::size_t i = 0; i < m * ckk; ++i) grad_w[i] += part[i];
  }
  return grad_w;
}

/// Applies every filter of a shared bank [P,K,K] to every channel of [B,N,H,W],
/// producing [B, N*P, Ho, Wo] with channel index n*P + p.
template <Real T>
Tensor<T> depthwise_bank(const Tensor<T>& input, const Tensor<T>& bank, const ConvGeometry& g) {
  detail::require_rank(input.shape(), 4, "depthwise_bank input");
  detail::require_rank(bank.shape(), 3, "depthwise_bank bank");
  const std::size_t nb = input.dim(0), n = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t p = bank.dim(0), k = bank.dim(1);
  if (k != g.kernel || bank.dim(2) != k) {
    throw ShapeError("depthwise_bank: bank " + shape_str(bank.shape()) + " vs kernel " +
                     std::to_string(g.kernel));
  }
  const std::size_t ho = g.output_extent(h), wo = g.output_extent(w), hw = ho * wo;
  Tensor<T> out({nb, n * p, ho, wo});
  parallel_for(nb * n, [&](std::size_t plane) {
    std::vector<T> col(k * k * hw);
    im2col(input.data() + plane * h * w, 1, h, w, g, ho, wo, col.data());
    gemm(bank.data(), col.data(), out.data() + plane * p * hw, p, k * k, hw);
  });
  return out;
}

/// Adjoint of depthwise_bank with respect to the input.
template <Real T>
Tensor<T> depthwise_bank_backward_input(const Tensor<T>& grad_out, const Tensor<T>& bank,
                                        const ConvGeometry& g, const Shape& input_shape) {
  const std::size_t nb = input_shape[0], n = input_shape[1], h = input_shape[2], w = input_shape[3];
  const std::size_t p = bank.dim(0), k = bank.dim(1);
  const std::size_t ho = g.output_extent(h), wo = g.output_extent(w), hw = ho * wo;
  if (grad_out.shape() != Shape{nb, n * p, ho, wo}) {
    throw ShapeError("depthwise_bank_backward_input: upstream " + shape_str(grad_out.shape()) +
                     " expected " + shape_str({nb, n * p, ho, wo}));
  }
  std::vector<T> bank_t(k * k * p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t r = 0; r < k * k; ++r) bank_t[r * p + i] = bank[i * k * k + r];
  Tensor<T> grad_in(input_shape);
  parallel_for(nb * n, [&](std::size_t plane) {
    std::vector<T> col(k * k * hw);
    gemm(bank_t.data(), grad_out.data() + plane * p * hw, col.data(), k * k, p, hw);
    col2im_add(col.data(), 1, h, w, g, ho, wo, grad_in.data() + plane * h * w);
  });
  return grad_in;
}

/// Per-channel mean and biased variance over (N, H, W), Welford accumulation.
template <Real T>
std::pair<Tensor<T>, Tensor<T>> batch_moments(const Tensor<T>& input) {
  detail::require_rank(input.shape(), 4, "batch_moments");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor<T> mean({c}), var({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu = 0.0, m2 = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* p = input.data() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        ++count;
        const double x = p[i];
        const double d = x - mu;
        mu += d / static_cast<double>(count);
        m2 += d * (x - mu);
      }
    }
    mean[ch] = static_cast<T>(mu);
    var[ch] = static_cast<T>(m2 / static_cast<double>(count));
  }
  return {std::move(mean), std::move(var)};
}

}  // namespace harmonic
