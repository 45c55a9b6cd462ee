#include <harmonic/gradcheck.hpp>
#include <harmonic/harmonic_block.hpp>

#include <gtest/gtest.h>

#include "support/block_fixtures.hpp"
#include "support/oracles.hpp"

using namespace harmonic;

namespace {

HarmonicBlockConfig make_cfg(std::size_t n, std::size_t m, std::size_t k, std::size_t stride,
                             std::size_t pad, std::size_t lambda = 0) {
  HarmonicBlockConfig c;
  c.in_channels = n;
  c.out_channels = m;
  c.kernel = k;
  c.geom = ConvGeometry{k, stride, pad};
  c.selection = lambda ? select_spectrum(k, lambda) : SpectrumSelection::full(k);
  return c;
}

template <Real T>
std::vector<oracle::FreqUV> freqs_of(const SpectrumSelection& s) {
  std::vector<oracle::FreqUV> f;
  for (auto q : s.indices()) f.push_back({q.u, q.v});
  return f;
}

}  // namespace

TEST(TwoStage, ConstantInputThroughDcFilter) {
  auto cfg = make_cfg(1, 1, 3, 1, 1);
  auto basis = make_basis<double>(3);
  HarmonicBlockParams<double> params{Tensor<double>({1, 1, 9}), std::nullopt, std::nullopt};
  params.weights[0] = 1.0;  // (0,0)
  const double c = 0.8;
  Tensor<double> x({1, 1, 6, 6}, c);
  auto y = forward_twostage(x, cfg, params, basis);
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 1; j < 5; ++j) EXPECT_NEAR(y.at(0, 0, i, j), 3.0 * c, 1e-12);
  // Corners only see four of the nine taps.
  EXPECT_NEAR(y.at(0, 0, 0, 0), 4.0 / 3.0 * c, 1e-12);
}

TEST(TwoStage, ZeroWeightsGiveBiasOnly) {
  auto cfg = make_cfg(2, 3, 3, 1, 1);
  cfg.has_bias = true;
  auto basis = make_basis<double>(3);
  HarmonicBlockParams<double> params{Tensor<double>({3, 2, 9}), Tensor<double>({3}, std::vector<double>{1, -2, 0.5}),
                                     std::nullopt};
  Rng rng(1);
  auto y = forward_twostage(rng.normal_tensor<double>({2, 2, 5, 5}), cfg, params, basis);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(y[(b * 3 + m) * 25 + i], (*params.bias)[m]);
}

TEST(TwoStage, MatchesLiteralTripleSum) {
  auto cfg = make_cfg(3, 4, 3, 1, 1);
  cfg.has_bias = true;
  Rng rng(2);
  auto basis = make_basis<float>(3);
  auto params = init_block_params<float>(cfg, rng);
  (*params.bias) = rng.normal_tensor<float>({4});
  auto x = rng.normal_tensor<float>({2, 3, 7, 7});
  auto y = forward_twostage(x, cfg, params, basis);
  auto ref = oracle::literal_harmonic(x, params.weights, freqs_of<float>(cfg.selection), 3, 1, 1, &*params.bias);
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-6);
}

TEST(TwoStage, TruncatedAndStridedMatchLiteral) {
  auto cfg = make_cfg(2, 3, 4, 2, 1, 3);
  Rng rng(3);
  auto basis = make_basis<double>(4);
  auto params = init_block_params<double>(cfg, rng);
  auto x = rng.normal_tensor<double>({1, 2, 9, 8});
  auto y = forward_twostage(x, cfg, params, basis);
  auto ref = oracle::literal_harmonic(x, params.weights, freqs_of<double>(cfg.selection), 4, 2, 1,
                                      static_cast<const Tensor<double>*>(nullptr));
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12);
}

TEST(TwoStage, SeparableAndDirectStage1Agree) {
  Rng rng(4);
  for (std::size_t k : {2u, 3u, 5u}) {
    auto cfg = make_cfg(3, 2, k, 1, k / 2, k);
    auto basis = make_basis<double>(k);
    auto x = rng.normal_tensor<double>({2, 3, 9, 7});
    auto sep = harmonic_stage1(x, cfg, basis, Stage1Method::separable);
    auto dir = harmonic_stage1(x, cfg, basis, Stage1Method::direct);
    EXPECT_LE(max_abs_diff(sep, dir), 1e-10);
  }
}

TEST(TwoStage, ParameterParityWithConvolution) {
  auto cfg = make_cfg(16, 32, 3, 1, 1);
  Rng rng(5);
  auto params = init_block_params<float>(cfg, rng);
  EXPECT_EQ(params.weight_count(), 16u * 32u * 3u * 3u);
  cfg.selection = select_spectrum(3, 2);
  EXPECT_EQ(init_block_params<float>(cfg, rng).weight_count(), 16u * 32u * 3u);
}

TEST(TwoStage, RejectsMismatches) {
  auto cfg = make_cfg(2, 2, 3, 1, 1);
  Rng rng(6);
  auto params = init_block_params<double>(cfg, rng);
  EXPECT_THROW(forward_twostage(Tensor<double>({1, 3, 5, 5}), cfg, params, make_basis<double>(3)), ShapeError);
  EXPECT_THROW(forward_twostage(Tensor<double>({1, 2, 5, 5}), cfg, params, make_basis<double>(4)), ShapeError);
  auto bad = cfg;
  bad.selection = select_spectrum(4, 2);
  EXPECT_THROW(forward_twostage(Tensor<double>({1, 2, 5, 5}), bad, params, make_basis<double>(3)),
               InvalidArgument);
}

TEST(SpectrumBn, TrainModeNormalizesEveryResponse) {
  auto cfg = make_cfg(2, 3, 3, 1, 1);
  cfg.use_spectrum_bn = true;
  Rng rng(7);
  auto basis = make_basis<double>(3);
  auto params = init_block_params<double>(cfg, rng);
  auto x = rng.normal_tensor<double>({4, 2, 6, 6}, 0.5, 2.0);
  auto fw = forward_cached(x, cfg, params, basis, Formulation::spectrum_bn, Mode::train);
  auto [mean, var] = batch_moments(fw.normalized);
  for (std::size_t c = 0; c < mean.size(); ++c) {
    EXPECT_NEAR(mean[c], 0.0, 1e-5);
    EXPECT_NEAR(var[c], 1.0, 1e-5);
  }
  // Running statistics moved toward the batch statistics.
  auto raw = batch_moments(fw.stage1);
  EXPECT_NEAR(params.bn->running_mean[0], 0.1 * raw.first[0], 1e-12);
}

TEST(SpectrumBn, PerChannelShiftOnlyMovesDcResponses) {
  auto cfg = make_cfg(2, 2, 3, 1, 0);
  auto basis = make_basis<double>(3);
  Rng rng(8);
  auto x = rng.normal_tensor<double>({2, 2, 6, 6});
  auto shifted = x;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 36; ++i) {
      shifted[(b * 2 + 0) * 36 + i] += 1.5;
      shifted[(b * 2 + 1) * 36 + i] -= 0.4;
    }
  auto s0 = harmonic_stage1(x, cfg, basis);
  auto s1 = harmonic_stage1(shifted, cfg, basis);
  const std::size_t hw = 16;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 9; ++p)
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = ((b * 2 + n) * 9 + p) * hw + i;
          if (p == 0) {
            EXPECT_GT(std::abs(s1[idx] - s0[idx]), 0.1);
          } else {
            EXPECT_NEAR(s1[idx], s0[idx], 1e-12);
          }
        }
  // Train-mode normalization re-centers the DC channels as well.
  cfg.use_spectrum_bn = true;
  auto params = init_block_params<double>(cfg, rng);
  auto p2 = params;
  auto y0 = forward_bn(x, cfg, params, basis, Mode::train);
  auto y1 = forward_bn(shifted, cfg, p2, basis, Mode::train);
  EXPECT_LE(max_abs_diff(y0, y1), 1e-9);
}

TEST(SpectrumBn, EvalCollapsesToTwoStage) {
  auto cfg = make_cfg(3, 4, 3, 2, 1);
  cfg.has_bias = true;
  Rng rng(9);
  auto basis = make_basis<double>(3);
  auto plain = init_block_params<double>(cfg, rng);
  (*plain.bias) = rng.normal_tensor<double>({4});
  auto bn_cfg = cfg;
  bn_cfg.use_spectrum_bn = true;
  auto with_bn = plain;
  with_bn.bn = SpectrumBnState<double>::identity(3 * 9);
  // Unit running variance plus epsilon equals one exactly.
  with_bn.bn->running_var.fill(1.0 - kBnEpsilon);
  auto x = rng.normal_tensor<double>({2, 3, 8, 8});
  EXPECT_LE(max_abs_diff(forward_bn(x, bn_cfg, with_bn, basis, Mode::eval), forward_twostage(x, cfg, plain, basis)),
            1e-6);
  // With running variance exactly 1 the outputs differ only by 1/sqrt(1 + eps).
  with_bn.bn->running_var.fill(1.0);
  auto y = forward_bn(x, bn_cfg, with_bn, basis, Mode::eval);
  auto ref = forward_twostage(x, cfg, plain, basis);
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-5 * (1.0 + std::abs(ref[i])));
}

TEST(SpectrumBn, Errors) {
  auto cfg = make_cfg(1, 1, 3, 1, 1);
  Rng rng(10);
  auto basis = make_basis<double>(3);
  auto params = init_block_params<double>(cfg, rng);
  Tensor<double> x({1, 1, 4, 4});
  EXPECT_THROW(forward_bn(x, cfg, params, basis, Mode::train), InvalidArgument);
  cfg.use_spectrum_bn = true;
  EXPECT_THROW(forward_bn(x, cfg, params, basis, Mode::train), InvalidArgument);
}

TEST(Synthesis, OneHotGivesBasisFilter) {
  auto cfg = make_cfg(1, 1, 3, 1, 1);
  auto basis = make_basis<double>(3);
  for (std::size_t p = 0; p < 9; ++p) {
    HarmonicBlockParams<double> params{Tensor<double>({1, 1, 9}), std::nullopt, std::nullopt};
    params.weights[p] = 1.0;
    auto g = synthesize_filters(params, cfg, basis);
    for (std::size_t e = 0; e < 9; ++e) ASSERT_EQ(g[e], basis.filters[p * 9 + e]);
  }
}

TEST(Synthesis, ZeroWeightsGiveZeroFilters) {
  auto cfg = make_cfg(2, 3, 3, 1, 1);
  HarmonicBlockParams<double> params{Tensor<double>({3, 2, 9}), std::nullopt, std::nullopt};
  auto g = synthesize_filters(params, cfg, make_basis<double>(3));
  for (auto v : g.span()) EXPECT_EQ(v, 0.0);
}

TEST(Synthesis, ProjectionRecoversWeights) {
  auto cfg = make_cfg(3, 2, 3, 1, 1);
  Rng rng(11);
  auto basis = make_basis<double>(3);
  auto params = init_block_params<double>(cfg, rng);
  auto g = synthesize_filters(params, cfg, basis);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t p = 0; p < 9; ++p) {
        double dot = 0.0;
        for (std::size_t e = 0; e < 9; ++e) dot += g[(m * 3 + n) * 9 + e] * basis.filters[p * 9 + e];
        ASSERT_NEAR(dot, params.weights.at(m, n, p), 1e-9);
      }
}

TEST(Synthesis, RejectedAcrossSpectrumBn) {
  auto cfg = make_cfg(1, 1, 3, 1, 1);
  cfg.use_spectrum_bn = true;
  HarmonicBlockParams<double> params{Tensor<double>({1, 1, 9}), std::nullopt, SpectrumBnState<double>::identity(9)};
  EXPECT_THROW(synthesize_filters(params, cfg, make_basis<double>(3)), InvalidArgument);
  EXPECT_THROW(forward_merged(Tensor<double>({1, 1, 4, 4}), cfg, params, make_basis<double>(3)), InvalidArgument);
}

TEST(Merged, EquivalentToTwoStageF64AndF32) {
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    auto rb = fixtures::random_block(rng, trial % 2 == 0);
    auto bd = make_basis<double>(rb.cfg.kernel);
    auto pd = init_block_params<double>(rb.cfg, rng);
    auto x = rng.normal_tensor<double>({rb.batch, rb.cfg.in_channels, rb.height, rb.width});
    EXPECT_LE(max_abs_diff(forward_merged(x, rb.cfg, pd, bd), forward_twostage(x, rb.cfg, pd, bd)), 1e-10);
    HarmonicBlockParams<float> pf{pd.weights.cast<float>(),
                                  pd.bias ? std::optional(pd.bias->cast<float>()) : std::nullopt, std::nullopt};
    auto bf = make_basis<float>(rb.cfg.kernel);
    auto xf = x.cast<float>();
    EXPECT_LE(max_abs_diff(forward_merged(xf, rb.cfg, pf, bf), forward_twostage(xf, rb.cfg, pf, bf)), 1e-4f);
  }
}

TEST(Merged, UnitKernelScalesInput) {
  auto cfg = make_cfg(1, 1, 1, 1, 0);
  auto basis = make_basis<double>(1);
  HarmonicBlockParams<double> params{Tensor<double>({1, 1, 1}, 1.0), std::nullopt, std::nullopt};
  Rng rng(13);
  auto x = rng.normal_tensor<double>({1, 1, 4, 5});
  auto y = forward_merged(x, cfg, params, basis);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i] * basis.filters[0]);
  EXPECT_EQ(basis.filters[0], 1.0);
}

TEST(Merged, StridedEquivalence) {
  auto cfg = make_cfg(4, 5, 3, 2, 1);
  Rng rng(14);
  auto basis = make_basis<double>(3);
  auto params = init_block_params<double>(cfg, rng);
  auto x = rng.normal_tensor<double>({2, 4, 11, 10});
  EXPECT_LE(max_abs_diff(forward_merged(x, cfg, params, basis), forward_twostage(x, cfg, params, basis)), 1e-10);
}

TEST(Block, Linearity) {
  auto cfg = make_cfg(3, 4, 3, 1, 1, 4);
  Rng rng(15);
  auto basis = make_basis<double>(3);
  auto params = init_block_params<double>(cfg, rng);
  auto x = rng.normal_tensor<double>({1, 3, 6, 6});
  auto y = rng.normal_tensor<double>({1, 3, 6, 6});
  const double a = 1.7, b = -0.6;
  for (auto fwd : {0, 1}) {
    auto f = [&](const Tensor<double>& in) {
      return fwd ? forward_merged(in, cfg, params, basis) : forward_twostage(in, cfg, params, basis);
    };
    EXPECT_LE(max_abs_diff(f(a * x + b * y), a * f(x) + b * f(y)), 1e-10);
  }
}

TEST(Block, DcRemovalInvariance) {
  auto cfg = make_cfg(3, 4, 3, 1, 0);
  cfg.selection = SpectrumSelection::full(3).without_dc();
  Rng rng(16);
  auto basis = make_basis<float>(3);
  auto params = init_block_params<float>(cfg, rng);
  auto x = rng.uniform_tensor<float>({2, 3, 8, 8}, 0.0, 1.0);
  auto shifted = x;
  const float offsets[] = {0.3f, -0.2f, 0.7f};
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 64; ++i) shifted[(b * 3 + c) * 64 + i] += offsets[c];
  EXPECT_LE(max_abs_diff(forward_twostage(x, cfg, params, basis), forward_twostage(shifted, cfg, params, basis)), 1e-5f);
  EXPECT_LE(max_abs_diff(forward_merged(x, cfg, params, basis), forward_merged(shifted, cfg, params, basis)), 1e-5f);
}

namespace {

template <Real T>
void check_gradients(Formulation form, Mode mode, double eps, double tol, std::uint64_t seed) {
  Rng rng(seed);
  auto cfg = make_cfg(2, 3, 3, 2, 1, 4);
  cfg.has_bias = true;
  cfg.use_spectrum_bn = form == Formulation::spectrum_bn;
  auto basis = make_basis<T>(3);
  auto params = init_block_params<T>(cfg, rng);
  (*params.bias) = rng.normal_tensor<T>({3});
  if (params.bn) {
    params.bn->gamma = rng.uniform_tensor<T>({params.bn->gamma.size()}, 0.5, 1.5);
    params.bn->beta = rng.normal_tensor<T>({params.bn->beta.size()});
    params.bn->running_mean = rng.normal_tensor<T>({params.bn->beta.size()}, 0.0, 0.1);
    params.bn->running_var = rng.uniform_tensor<T>({params.bn->beta.size()}, 0.5, 2.0);
  }
  auto x = rng.normal_tensor<T>({2, 2, 7, 6});
  auto probe = forward_cached(x, cfg, params, basis, form, mode);
  auto up = rng.normal_tensor<T>(probe.output.shape());
  auto grads = block_gradients(x, cfg, params, basis, up, form, mode);

  auto loss_with = [&](const HarmonicBlockParams<T>& p, const Tensor<T>& in) {
    auto scratch = p;
    return fixtures::weighted_sum(forward_cached(in, cfg, scratch, basis, form, mode).output, up);
  };
  auto fd_x = finite_diff_grad<T>([&](const Tensor<T>& in) { return loss_with(params, in); }, x, eps);
  EXPECT_LE(relative_error(fd_x, grads.grad_input), tol) << "input";
  auto fd_w = finite_diff_grad<T>(
      [&](const Tensor<T>& w) {
        auto p = params;
        p.weights = w;
        return loss_with(p, x);
      },
      params.weights, eps);
  EXPECT_LE(relative_error(fd_w, grads.grad_weights), tol) << "weights";
  auto fd_b = finite_diff_grad<T>(
      [&](const Tensor<T>& b) {
        auto p = params;
        p.bias = b;
        return loss_with(p, x);
      },
      *params.bias, eps);
  EXPECT_LE(relative_error(fd_b, *grads.grad_bias), tol) << "bias";
  if (params.bn) {
    auto fd_g = finite_diff_grad<T>(
        [&](const Tensor<T>& g) {
          auto p = params;
          p.bn->gamma = g;
          return loss_with(p, x);
        },
        params.bn->gamma, eps);
    EXPECT_LE(relative_error(fd_g, *grads.grad_gamma), tol) << "gamma";
    auto fd_be = finite_diff_grad<T>(
        [&](const Tensor<T>& be) {
          auto p = params;
          p.bn->beta = be;
          return loss_with(p, x);
        },
        params.bn->beta, eps);
    EXPECT_LE(relative_error(fd_be, *grads.grad_beta), tol) << "beta";
  }
}

}  // namespace

TEST(Gradients, TwoStageF64) { check_gradients<double>(Formulation::twostage, Mode::train, 1e-5, 1e-6, 20); }
TEST(Gradients, MergedF64) { check_gradients<double>(Formulation::merged, Mode::train, 1e-5, 1e-6, 21); }
TEST(Gradients, SpectrumBnTrainF64) { check_gradients<double>(Formulation::spectrum_bn, Mode::train, 1e-5, 1e-6, 22); }
TEST(Gradients, SpectrumBnEvalF64) { check_gradients<double>(Formulation::spectrum_bn, Mode::eval, 1e-5, 1e-6, 23); }
TEST(Gradients, TwoStageF32) { check_gradients<float>(Formulation::twostage, Mode::train, 1e-2, 1e-3, 24); }
TEST(Gradients, MergedF32) { check_gradients<float>(Formulation::merged, Mode::train, 1e-2, 1e-3, 25); }
TEST(Gradients, SpectrumBnTrainF32) { check_gradients<float>(Formulation::spectrum_bn, Mode::train, 1e-2, 1e-3, 26); }

TEST(Gradients, ZeroUpstreamGivesZero) {
  auto cfg = make_cfg(2, 2, 3, 1, 1);
  cfg.has_bias = true;
  cfg.use_spectrum_bn = true;
  Rng rng(27);
  auto basis = make_basis<double>(3);
  auto params = init_block_params<double>(cfg, rng);
  auto x = rng.normal_tensor<double>({2, 2, 5, 5});
  Tensor<double> up({2, 2, 5, 5});
  for (auto form : {Formulation::twostage, Formulation::spectrum_bn}) {
    auto g = block_gradients(x, cfg, params, basis, up, form);
    for (auto v : g.grad_input.span()) ASSERT_EQ(v, 0.0);
    for (auto v : g.grad_weights.span()) ASSERT_EQ(v, 0.0);
    for (auto v : g.grad_bias->span()) ASSERT_EQ(v, 0.0);
  }
}

TEST(Gradients, MergedAndTwoStageInputGradientsAgree) {
  Rng rng(28);
  for (int trial = 0; trial < 10; ++trial) {
    auto rb = fixtures::random_block(rng, true);
    auto basis = make_basis<double>(rb.cfg.kernel);
    auto params = init_block_params<double>(rb.cfg, rng);
    auto x = rng.normal_tensor<double>({rb.batch, rb.cfg.in_channels, rb.height, rb.width});
    auto y = forward_twostage(x, rb.cfg, params, basis);
    auto up = rng.normal_tensor<double>(y.shape());
    auto a = block_gradients(x, rb.cfg, params, basis, up, Formulation::twostage);
    auto b = block_gradients(x, rb.cfg, params, basis, up, Formulation::merged);
    EXPECT_LE(max_abs_diff(a.grad_input, b.grad_input), 1e-10);
    EXPECT_LE(max_abs_diff(a.grad_weights, b.grad_weights), 1e-10);
  }
}

TEST(Gradients, UpstreamShapeMismatch) {
  auto cfg = make_cfg(1, 1, 3, 1, 1);
  Rng rng(29);
  auto params = init_block_params<double>(cfg, rng);
  EXPECT_THROW(block_gradients(Tensor<double>({1, 1, 5, 5}), cfg, params, make_basis<double>(3),
                               Tensor<double>({1, 1, 4, 4}), Formulation::twostage),
               ShapeError);
}
