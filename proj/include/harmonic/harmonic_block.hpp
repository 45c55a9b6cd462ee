#pragma once

#include <harmonic/conv.hpp>
#include <harmonic/dct_basis.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace harmonic {

/// Shape and options of one harmonic layer.
struct HarmonicBlockConfig {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  ConvGeometry geom{3, 1, 1};
  SpectrumSelection selection = SpectrumSelection::full(3);
  bool use_spectrum_bn = false;
  BasisNorm basis_norm = BasisNorm::orthonormal;
  bool has_bias = false;

  std::size_t retained() const noexcept { return selection.size(); }

  void validate() const {
    if (in_channels == 0 || out_channels == 0) throw InvalidArgument("harmonic block: empty channels");
    if (geom.kernel != kernel) {
      throw InvalidArgument("harmonic block: geometry kernel " + std::to_string(geom.kernel) +
                            " != K " + std::to_string(kernel));
    }
    if (selection.kernel() != kernel) {
      throw InvalidArgument("harmonic block: selection K " + std::to_string(selection.kernel()) +
                            " != K " + std::to_string(kernel));
    }
  }
};

/// Per-(channel, frequency) normalization state, each tensor [N*P].
template <Real T>
struct SpectrumBnState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  Tensor<T> gamma;
  Tensor<T> beta;

  static SpectrumBnState identity(std::size_t count) {
    return {Tensor<T>({count}, T(0)), Tensor<T>({count}, T(1)), Tensor<T>({count}, T(1)),
            Tensor<T>({count}, T(0))};
  }
};

template <Real T>
struct HarmonicBlockParams {
  Tensor<T> weights;  // [M, N, P]
  std::optional<Tensor<T>> bias;
  std::optional<SpectrumBnState<T>> bn;

  std::size_t weight_count() const noexcept { return weights.size(); }
};

enum class Mode { train, eval };
enum class Stage1Method { automatic, separable, direct };
enum class Formulation { twostage, spectrum_bn, merged };

inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEpsilon = 1e-5;

/// He-style init: N(0, 2 / (N * P)) combination weights, zero bias, identity BN.
template <Real T>
HarmonicBlockParams<T> init_block_params(const HarmonicBlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = cfg.in_channels, m = cfg.out_channels, p = cfg.retained();
  HarmonicBlockParams<T> params;
  params.weights = rng.normal_tensor<T>({m, n, p}, 0.0, std::sqrt(2.0 / static_cast<double>(n * p)));
  if (cfg.has_bias) params.bias = Tensor<T>({m});
  if (cfg.use_spectrum_bn) params.bn = SpectrumBnState<T>::identity(n * p);
  return params;
}

namespace detail {

template <Real T>
void check_block(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                 const HarmonicBlockParams<T>& params, const DctBasis<T>& basis) {
  cfg.validate();
  if (input.rank() != 4 || input.dim(1) != cfg.in_channels) {
    throw ShapeError("harmonic block: input " + shape_str(input.shape()) + " expects " +
                     std::to_string(cfg.in_channels) + " channels");
  }
  if (basis.size != cfg.kernel) {
    throw ShapeError("harmonic block: basis K=" + std::to_string(basis.size) + " vs config K=" +
                     std::to_string(cfg.kernel));
  }
  const Shape ws{cfg.out_channels, cfg.in_channels, cfg.retained()};
  if (params.weights.shape() != ws) {
    throw ShapeError("harmonic block: weights " + shape_str(params.weights.shape()) +
                     " expected " + shape_str(ws));
  }
  if (cfg.has_bias != params.bias.has_value()) {
    throw ShapeError("harmonic block: bias presence does not match config");
  }
  if (params.bias && params.bias->shape() != Shape{cfg.out_channels}) {
    throw ShapeError("harmonic block: bias shape " + shape_str(params.bias->shape()));
  }
}

/// Stage 1 via rank-1 row/column passes; stride 1 only.
template <Real T>
Tensor<T> stage1_separable(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                           const DctBasis<T>& basis) {
  if (cfg.geom.stride != 1) throw InvalidArgument("separable stage 1 requires stride 1");
  const std::size_t nb = input.dim(0), n = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = cfg.kernel, pad = cfg.geom.padding;
  const std::size_t ho = cfg.geom.output_extent(h), wo = cfg.geom.output_extent(w);
  const std::size_t hp = h + 2 * pad;
  const auto& sel = cfg.selection;
  const std::size_t p = sel.size();
  Tensor<T> out({nb, n * p, ho, wo});
  std::vector<bool> used_v(k, false);
  for (const auto& f : sel.indices()) used_v[f.v] = true;
  parallel_for(nb * n, [&](std::size_t plane) {
    const T* x = input.data() + plane * h * w;
    std::vector<T> rowpass(hp * wo);
    for (std::size_t v = 0; v < k; ++v) {
      if (!used_v[v]) continue;
      const T* rv = basis.rows.data() + v * k;
      std::fill(rowpass.begin(), rowpass.end(), T(0));
      for (std::size_t r = pad; r < pad + h; ++r) {
        const T* src = x + (r - pad) * w;
        T* dst = rowpass.data() + r * wo;
        for (std::size_t y = 0; y < k; ++y) {
          const T coef = rv[y];
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + y) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ox] += coef * src[ix];
          }
        }
      }
      for (std::size_t q = 0; q < p; ++q) {
        if (sel[q].v != v) continue;
        const T* ru = basis.rows.data() + sel[q].u * k;
        T* dst = out.data() + (plane * p + q) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          T* drow = dst + oy * wo;
          for (std::size_t xk = 0; xk < k; ++xk) {
            const T coef = ru[xk];
            const T* srow = rowpass.data() + (oy + xk) * wo;
            for (std::size_t ox = 0; ox < wo; ++ox) drow[ox] += coef * srow[ox];
          }
        }
      }
    }
  });
  return out;
}

/// Stage 2: 1x1 combination [B, N*P, Ho, Wo] -> [B, M, Ho, Wo] plus bias.
template <Real T>
Tensor<T> combine(const Tensor<T>& stage1, const Tensor<T>& weights, const std::optional<Tensor<T>>& bias) {
  const std::size_t nb = stage1.dim(0), np = stage1.dim(1), hw = stage1.dim(2) * stage1.dim(3);
  const std::size_t m = weights.dim(0);
  Tensor<T> out({nb, m, stage1.dim(2), stage1.dim(3)});
  for (std::size_t b = 0; b < nb; ++b) {
    gemm(weights.data(), stage1.data() + b * np * hw, out.data() + b * m * hw, m, np, hw);
    if (bias) {
      for (std::size_t i = 0; i < m; ++i) {
        T* o = out.data() + (b * m + i) * hw;
        const T bi = (*bias)[i];
        for (std::size_t j = 0; j < hw; ++j) o[j] += bi;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Depthwise responses of every input channel to every retained DCT filter,
/// [B, N*P, Ho, Wo] with channel n*P + p.
template <Real T>
Tensor<T> harmonic_stage1(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                          const DctBasis<T>& basis, Stage1Method method = Stage1Method::automatic) {
  if (method == Stage1Method::separable ||
      (method == Stage1Method::automatic && cfg.geom.stride == 1)) {
    return detail::stage1_separable(input, cfg, basis);
  }
  return depthwise_bank(input, selected_bank(basis, cfg.selection), cfg.geom);
}

/// Intermediate values kept for the backward pass.
template <Real T>
struct BlockForward {
  Tensor<T> output;
  Tensor<T> stage1;      // raw DCT responses (two-stage and spectrum-BN)
  Tensor<T> normalized;  // (stage1 - mean) * inv_std (spectrum-BN)
  Tensor<T> inv_std;     // [N*P]
  Tensor<T> filters;     // synthesized [M, N, K, K] (merged)
  Mode mode = Mode::eval;
};

/// Two-stage block: DCT decomposition followed by a learned 1x1 combination.
template <Real T>
Tensor<T> forward_twostage(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                           const HarmonicBlockParams<T>& params, const DctBasis<T>& basis,
                           Stage1Method method = Stage1Method::automatic) {
  detail::check_block(input, cfg, params, basis);
  return detail::combine(harmonic_stage1(input, cfg, basis, method), params.weights, params.bias);
}

namespace detail {

template <Real T>
BlockForward<T> forward_bn_cached(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                                  HarmonicBlockParams<T>& params, const DctBasis<T>& basis,
                                  Mode mode) {
  check_block(input, cfg, params, basis);
  if (!cfg.use_spectrum_bn) throw InvalidArgument("forward_bn: config has use_spectrum_bn = false");
  if (!params.bn) throw InvalidArgument("forward_bn: missing spectrum normalization state");
  auto& bn = *params.bn;
  const std::size_t np = cfg.in_channels * cfg.retained();
  for (const auto* t : {&bn.running_mean, &bn.running_var, &bn.gamma, &bn.beta}) {
    if (t->shape() != Shape{np}) throw ShapeError("forward_bn: bn state shape " + shape_str(t->shape()));
  }
  BlockForward<T> fw;
  fw.mode = mode;
  fw.stage1 = harmonic_stage1(input, cfg, basis);
  const std::size_t nb = fw.stage1.dim(0), hw = fw.stage1.dim(2) * fw.stage1.dim(3);
  const std::size_t count = nb * hw;
  if (mode == Mode::train && count == 0) throw InvalidArgument("forward_bn: empty batch in train mode");
  Tensor<T> mean({np}), var({np});
  if (mode == Mode::train) {
    auto moments = batch_moments(fw.stage1);
    mean = std::move(moments.first);
    var = std::move(moments.second);
    const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    for (std::size_t c = 0; c < np; ++c) {
      bn.running_mean[c] = static_cast<T>((1.0 - kBnMomentum) * bn.running_mean[c] + kBnMomentum * mean[c]);
      bn.running_var[c] =
          static_cast<T>((1.0 - kBnMomentum) * bn.running_var[c] + kBnMomentum * var[c] * unbias);
    }
  } else {
    mean = bn.running_mean;
    var = bn.running_var;
  }
  fw.inv_std = Tensor<T>({np});
  for (std::size_t c = 0; c < np; ++c) {
    fw.inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[c]) + kBnEpsilon));
  }
  fw.normalized = fw.stage1;
  Tensor<T> scaled(fw.stage1.shape());
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t c = 0; c < np; ++c) {
      const std::size_t off = (b * np + c) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const T xh = (fw.stage1[off + j] - mean[c]) * fw.inv_std[c];
        fw.normalized[off + j] = xh;
        scaled[off + j] = bn.gamma[c] * xh + bn.beta[c];
      }
    }
  }
  fw.output = combine(scaled, params.weights, params.bias);
  return fw;
}

}  // namespace detail

/// Two-stage block with per-(channel, frequency) normalization of the DCT
/// responses. Train mode uses batch statistics and updates the running
/// averages in params; eval mode uses the running averages.
template <Real T>
Tensor<T> forward_bn(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                     HarmonicBlockParams<T>& params, const DctBasis<T>& basis, Mode mode) {
  return detail::forward_bn_cached(input, cfg, params, basis, mode).output;
}

/// g[m][n] = sum_p w[m][n][p] psi_p. Invalid across a spectrum normalization.
template <Real T>
Tensor<T> synthesize_filters(const HarmonicBlockParams<T>& params, const HarmonicBlockConfig& cfg,
                             const DctBasis<T>& basis) {
  cfg.validate();
  if (cfg.use_spectrum_bn) {
    throw InvalidArgument("synthesize_filters: cannot merge filters across spectrum normalization");
  }
  if (basis.size != cfg.kernel) throw ShapeError("synthesize_filters: basis K mismatch");
  const std::size_t m = cfg.out_channels, n = cfg.in_channels, p = cfg.retained();
  const std::size_t k = cfg.kernel, kk = k * k;
  if (params.weights.shape() != Shape{m, n, p}) {
    throw ShapeError("synthesize_filters: weights " + shape_str(params.weights.shape()));
  }
  const Tensor<T> bank = selected_bank(basis, cfg.selection);
  Tensor<T> g({m, n, k, k});
  // [M*N x P] * [P x K*K]
  gemm(params.weights.data(), bank.data(), g.data(), m * n, p, kk);
  return g;
}

/// Single convolution with the synthesized filters.
template <Real T>
Tensor<T> forward_merged(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                         const HarmonicBlockParams<T>& params, const DctBasis<T>& basis) {
  detail::check_block(input, cfg, params, basis);
  Tensor<T> out = conv2d(input, synthesize_filters(params, cfg, basis), cfg.geom);
  if (params.bias) {
    const std::size_t nb = out.dim(0), m = out.dim(1), hw = out.dim(2) * out.dim(3);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < hw; ++j) out[(b * m + i) * hw + j] += (*params.bias)[i];
  }
  return out;
}

template <Real T>
struct BlockGradients {
  Tensor<T> grad_input;
  Tensor<T> grad_weights;
  std::optional<Tensor<T>> grad_bias;
  std::optional<Tensor<T>> grad_gamma;
  std::optional<Tensor<T>> grad_beta;
};

/// Runs the chosen formulation forward and keeps what backward needs.
/// Spectrum-BN in train mode updates the running statistics of params.
template <Real T>
BlockForward<T> forward_cached(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                               HarmonicBlockParams<T>& params, const DctBasis<T>& basis,
                               Formulation form, Mode mode) {
  switch (form) {
    case Formulation::spectrum_bn:
      return detail::forward_bn_cached(input, cfg, params, basis, mode);
    case Formulation::twostage: {
      detail::check_block(input, cfg, params, basis);
      BlockForward<T> fw;
      fw.mode = mode;
      fw.stage1 = harmonic_stage1(input, cfg, basis);
      fw.output = detail::combine(fw.stage1, params.weights, params.bias);
      return fw;
    }
    case Formulation::merged: {
      detail::check_block(input, cfg, params, basis);
      BlockForward<T> fw;
      fw.mode = mode;
      fw.filters = synthesize_filters(params, cfg, basis);
      fw.output = conv2d(input, fw.filters, cfg.geom);
      if (params.bias) {
        const std::size_t nb = fw.output.dim(0), m = fw.output.dim(1);
        const std::size_t hw = fw.output.dim(2) * fw.output.dim(3);
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < hw; ++j) fw.output[(b * m + i) * hw + j] += (*params.bias)[i];
      }
      return fw;
    }
  }
  throw InvalidArgument("unknown formulation");
}

/// Analytic gradients given a cached forward pass.
template <Real T>
BlockGradients<T> backward_cached(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                                  const HarmonicBlockParams<T>& params, const DctBasis<T>& basis,
                                  Formulation form, const BlockForward<T>& fw,
                                  const Tensor<T>& upstream) {
  if (upstream.shape() != fw.output.shape()) {
    throw ShapeError("block_gradients: upstream " + shape_str(upstream.shape()) +
                     " does not match output " + shape_str(fw.output.shape()));
  }
  const std::size_t nb = upstream.dim(0), m = cfg.out_channels, n = cfg.in_channels;
  const std::size_t p = cfg.retained(), np = n * p, k = cfg.kernel, kk = k * k;
  const std::size_t hw = upstream.dim(2) * upstream.dim(3);
  BlockGradients<T> g;
  if (params.bias) {
    Tensor<T> gb({m});
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < m; ++i) {
        const T* u = upstream.data() + (b * m + i) * hw;
        T acc = 0;
        for (std::size_t j = 0; j < hw; ++j) acc += u[j];
        gb[i] += acc;
      }
    g.grad_bias = std::move(gb);
  }

  if (form == Formulation::merged) {
    const Tensor<T> gfilt = conv2d_backward_filter(input, upstream, cfg.geom);  // [M,N,K,K]
    const Tensor<T> bank = selected_bank(basis, cfg.selection);                 // [P,K,K]
    Tensor<T> bank_t({kk, p});
    for (std::size_t q = 0; q < p; ++q)
      for (std::size_t r = 0; r < kk; ++r) bank_t[r * p + q] = bank[q * kk + r];
    g.grad_weights = Tensor<T>({m, n, p});
    gemm(gfilt.data(), bank_t.data(), g.grad_weights.data(), m * n, kk, p);
    g.grad_input = conv2d_backward_input(upstream, fw.filters, cfg.geom, input.shape());
    return g;
  }

  const bool bn = form == Formulation::spectrum_bn;
  const Tensor<T>& combined_in = bn ? fw.normalized : fw.stage1;
  // Combination input is gamma * xhat + beta under BN; rebuild it for dW.
  Tensor<T> scaled;
  if (bn) {
    scaled = fw.normalized;
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t c = 0; c < np; ++c)
        for (std::size_t j = 0; j < hw; ++j) {
          T& v = scaled[(b * np + c) * hw + j];
          v = params.bn->gamma[c] * v + params.bn->beta[c];
        }
  }
  const Tensor<T>& z = bn ? scaled : combined_in;

  Tensor<T> wt({np, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < np; ++c) wt[c * m + i] = params.weights[i * np + c];
  Tensor<T> dz(z.shape());
  g.grad_weights = Tensor<T>({m, n, p});
  std::vector<T> zt(hw * np), part(m * np);
  for (std::size_t b = 0; b < nb; ++b) {
    gemm(wt.data(), upstream.data() + b * m * hw, dz.data() + b * np * hw, np, m, hw);
    const T* zb = z.data() + b * np * hw;
    for (std::size_t c = 0; c < np; ++c)
      for (std::size_t j = 0; j < hw; ++j) zt[j * np + c] = zb[c * hw + j];
    gemm(upstream.data() + b * m * hw, zt.data(), part.data(), m, hw, np);
    for (std::size_t i = 0; i < m * np; ++i) g.grad_weights[i] += part[i];
  }

  Tensor<T> ds = std::move(dz);
  if (bn) {
    const auto& st = *params.bn;
    Tensor<T> ggamma({np}), gbeta({np});
    const double count = static_cast<double>(nb * hw);
    for (std::size_t c = 0; c < np; ++c) {
      double sum_dz = 0.0, sum_dz_xh = 0.0;
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t off = (b * np + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          sum_dz += ds[off + j];
          sum_dz_xh += static_cast<double>(ds[off + j]) * fw.normalized[off + j];
        }
      }
      ggamma[c] = static_cast<T>(sum_dz_xh);
      gbeta[c] = static_cast<T>(sum_dz);
      const double gam = st.gamma[c], istd = fw.inv_std[c];
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t off = (b * np + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const double dxh = gam * ds[off + j];
          if (fw.mode == Mode::train) {
            const double mean_dxh = gam * sum_dz / count;
            const double mean_dxh_xh = gam * sum_dz_xh / count;
            ds[off + j] = static_cast<T>(istd * (dxh - mean_dxh - fw.normalized[off + j] * mean_dxh_xh));
          } else {
            ds[off + j] = static_cast<T>(istd * dxh);
          }
        }
      }
    }
    g.grad_gamma = std::move(ggamma);
    g.grad_beta = std::move(gbeta);
  }
  g.grad_input =
      depthwise_bank_backward_input(ds, selected_bank(basis, cfg.selection), cfg.geom, input.shape());
  return g;
}

/// Analytic gradients of sum(upstream * forward(input)) for one formulation.
/// Parameters are not modified (BN running statistics are updated on a copy).
template <Real T>
BlockGradients<T> block_gradients(const Tensor<T>& input, const HarmonicBlockConfig& cfg,
                                  const HarmonicBlockParams<T>& params, const DctBasis<T>& basis,
                                  const Tensor<T>& upstream, Formulation form,
                                  Mode mode = Mode::train) {
  HarmonicBlockParams<T> scratch = params;
  const BlockForward<T> fw = forward_cached(input, cfg, scratch, basis, form, mode);
  return backward_cached(input, cfg, params, basis, form, fw, upstream);
}

}  // namespace harmonic
