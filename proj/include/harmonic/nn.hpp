#pragma once

#include <harmonic/params.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <memory>

namespace harmonic {

/// Which harmonic formulation runs layers without spectrum normalization.
enum class HarmImpl { twostage, merged };

template <Real T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, ParamStore<T>& params, Mode mode, Rng& rng) = 0;
  /// Accumulates parameter gradients into grads and returns d(loss)/d(input).
  virtual Tensor<T> backward(const Tensor<T>& dy, const ParamStore<T>& params, ParamStore<T>& grads) = 0;
};

namespace layers {

template <Real T>
void accumulate(ParamStore<T>& grads, const std::string& name, const Tensor<T>& g) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, g);
  } else {
    it->second += g;
  }
}

template <Real T>
void add_channel_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const std::size_t nb = y.dim(0), c = y.dim(1), hw = y.dim(2) * y.dim(3);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < hw; ++j) y[(b * c + i) * hw + j] += bias[i];
}

template <Real T>
Tensor<T> channel_sums(const Tensor<T>& dy) {
  const std::size_t nb = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  Tensor<T> g({c});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < c; ++i) {
      T acc = 0;
      for (std::size_t j = 0; j < hw; ++j) acc += dy[(b * c + i) * hw + j];
      g[i] += acc;
    }
  return g;
}

template <Real T>
class Conv final : public Layer<T> {
 public:
  Conv(std::string id, const LayerSpec& l) : id_(std::move(id)), geom_{l.kernel, l.stride, l.pad}, bias_(l.bias) {}

  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>& p, Mode, Rng&) override {
    x_ = x;
    Tensor<T> y = conv2d(x, p.at(id_ + ".weight"), geom_);
    if (bias_) add_channel_bias(y, p.at(id_ + ".bias"));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const ParamStore<T>& p, ParamStore<T>& g) override {
    accumulate(g, id_ + ".weight", conv2d_backward_filter(x_, dy, geom_));
    if (bias_) accumulate(g, id_ + ".bias", channel_sums(dy));
    return conv2d_backward_input(dy, p.at(id_ + ".weight"), geom_, x_.shape());
  }

 private:
  std::string id_;
  ConvGeometry geom_;
  bool bias_;
  Tensor<T> x_;
};

template <Real T>
class Harm final : public Layer<T> {
 public:
  Harm(std::string id, HarmonicBlockConfig cfg, std::shared_ptr<const DctBasis<T>> basis, HarmImpl impl)
      : id_(std::move(id)), cfg_(std::move(cfg)), basis_(std::move(basis)) {
    form_ = cfg_.use_spectrum_bn ? Formulation::spectrum_bn
            : impl == HarmImpl::merged ? Formulation::merged
                                       : Formulation::twostage;
  }

  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>& p, Mode mode, Rng&) override {
    x_ = x;
    params_ = block_params(p, id_, cfg_);
    fw_ = forward_cached(x, cfg_, params_, *basis_, form_, mode);
    if (cfg_.use_spectrum_bn && mode == Mode::train) {
      p.at(id_ + ".bn_mean") = params_.bn->running_mean;
      p.at(id_ + ".bn_var") = params_.bn->running_var;
    }
    return fw_.output;
  }

  Tensor<T> backward(const Tensor<T>& dy, const ParamStore<T>&, ParamStore<T>& g) override {
    auto grads = backward_cached(x_, cfg_, params_, *basis_, form_, fw_, dy);
    accumulate(g, id_ + ".weight", grads.grad_weights);
    if (grads.grad_bias) accumulate(g, id_ + ".bias", *grads.grad_bias);
    if (grads.grad_gamma) accumulate(g, id_ + ".bn_gamma", *grads.grad_gamma);
    if (grads.grad_beta) accumulate(g, id_ + ".bn_beta", *grads.grad_beta);
    return std::move(grads.grad_input);
  }

 private:
  std::string id_;
  HarmonicBlockConfig cfg_;
  std::shared_ptr<const DctBasis<T>> basis_;
  Formulation form_;
  Tensor<T> x_;
  HarmonicBlockParams<T> params_;
  BlockForward<T> fw_;
};

/// Per-channel batch normalization with running averages for eval mode.
template <Real T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(std::string id) : id_(std::move(id)) {}

  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>& p, Mode mode, Rng&) override {
    const std::size_t nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    auto& rm = p.at(id_ + ".running_mean");
    auto& rv = p.at(id_ + ".running_var");
    const auto& gamma = p.at(id_ + ".gamma");
    const auto& beta = p.at(id_ + ".beta");
    Tensor<T> mean = rm, var = rv;
    mode_ = mode;
    if (mode == Mode::train) {
      auto mv = batch_moments(x);
      mean = std::move(mv.first);
      var = std::move(mv.second);
      const std::size_t count = nb * hw;
      const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
      for (std::size_t i = 0; i < c; ++i) {
        rm[i] = static_cast<T>((1.0 - kBnMomentum) * rm[i] + kBnMomentum * mean[i]);
        rv[i] = static_cast<T>((1.0 - kBnMomentum) * rv[i] + kBnMomentum * var[i] * unbias);
      }
    }
    inv_std_ = Tensor<T>({c});
    for (std::size_t i = 0; i < c; ++i) inv_std_[i] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[i]) + kBnEpsilon));
    xhat_ = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t k = (b * c + i) * hw + j;
          xhat_[k] = (x[k] - mean[i]) * inv_std_[i];
          y[k] = gamma[i] * xhat_[k] + beta[i];
        }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const ParamStore<T>& p, ParamStore<T>& g) override {
    const std::size_t nb = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
    const auto& gamma = p.at(id_ + ".gamma");
    Tensor<T> dx(dy.shape()), dgamma({c}), dbeta({c});
    const double count = static_cast<double>(nb * hw);
    for (std::size_t i = 0; i < c; ++i) {
      double s = 0.0, sx = 0.0;
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t k = (b * c + i) * hw + j;
          s += dy[k];
          sx += static_cast<double>(dy[k]) * xhat_[k];
        }
      dgamma[i] = static_cast<T>(sx);
      dbeta[i] = static_cast<T>(s);
      const double gi = gamma[i], is = inv_std_[i];
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t k = (b * c + i) * hw + j;
          dx[k] = mode_ == Mode::train ? static_cast<T>(gi * is * (dy[k] - s / count - xhat_[k] * sx / count))
                                       : static_cast<T>(gi * is * dy[k]);
        }
    }
    accumulate(g, id_ + ".gamma", dgamma);
    accumulate(g, id_ + ".beta", dbeta);
    return dx;
  }

 private:
  std::string id_;
  Mode mode_ = Mode::eval;
  Tensor<T> xhat_, inv_std_;
};

template <Real T>
class Relu final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>&, Mode, Rng&) override {
    Tensor<T> y = x;
    for (auto& v : y.span()) v = v > T(0) ? v : T(0);
    y_ = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy, const ParamStore<T>&, ParamStore<T>&) override {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(y_[i] > T(0))) dx[i] = T(0);
    return dx;
  }

 private:
  Tensor<T> y_;
};

/// Max or average pooling with zero padding; averages divide by the full
/// window area, padding included.
template <Real T>
class Pool final : public Layer<T> {
 public:
  explicit Pool(const LayerSpec& l) : mode_(l.pool), k_(l.kernel), stride_(l.stride), pad_(l.pad) {}

  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>&, Mode, Rng&) override {
    in_shape_ = x.shape();
    const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const ConvGeometry g{k_, stride_, pad_};
    const std::size_t ho = g.output_extent(h), wo = g.output_extent(w);
    Tensor<T> y({nb, c, ho, wo});
    argmax_.assign(y.size(), 0);
    const T area = static_cast<T>(k_ * k_);
    for (std::size_t plane = 0; plane < nb * c; ++plane) {
      const T* src = x.data() + plane * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity(), acc = 0;
          std::size_t arg = 0;
          for (std::size_t ky = 0; ky < k_; ++ky)
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
              acc += src[idx];
              if (src[idx] > best) best = src[idx], arg = idx;
            }
          const std::size_t o = (plane * ho + oy) * wo + ox;
          y[o] = mode_ == PoolMode::max ? best : acc / area;
          argmax_[o] = arg;
        }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const ParamStore<T>&, ParamStore<T>&) override {
    Tensor<T> dx(in_shape_);
    const std::size_t h = in_shape_[2], w = in_shape_[3];
    const std::size_t nb = dy.dim(0), c = dy.dim(1), ho = dy.dim(2), wo = dy.dim(3);
    const T area = static_cast<T>(k_ * k_);
    for (std::size_t plane = 0; plane < nb * c; ++plane) {
      T* dst = dx.data() + plane * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const std::size_t o = (plane * ho + oy) * wo + ox;
          if (mode_ == PoolMode::max) {
            dst[argmax_[o]] += dy[o];
            continue;
          }
          for (std::size_t ky = 0; ky < k_; ++ky)
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              dst[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] += dy[o] / area;
            }
        }
    }
    return dx;
  }

 private:
  PoolMode mode_;
  std::size_t k_, stride_, pad_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Inverted dropout: surviving activations are scaled by 1/(1-p) in training.
template <Real T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double p) : p_(p) {}

  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>&, Mode mode, Rng& rng) override {
    if (mode == Mode::eval || p_ == 0.0) {
      mask_ = Tensor<T>(x.shape(), T(1));
      return x;
    }
    mask_ = Tensor<T>(x.shape());
    const T keep = static_cast<T>(1.0 / (1.0 - p_));
    for (auto& m : mask_.span()) m = rng.uniform() < p_ ? T(0) : keep;
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask_[i];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const ParamStore<T>&, ParamStore<T>&) override {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
    return dx;
  }

 private:
  double p_;
  Tensor<T> mask_;
};

/// Fully connected layer over the flattened input; output is [B, out, 1, 1].
template <Real T>
class Fc final : public Layer<T> {
 public:
  Fc(std::string id, const LayerSpec& l) : id_(std::move(id)), out_(l.out), bias_(l.bias) {}

  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>& p, Mode, Rng&) override {
    x_ = x;
    const auto& w = p.at(id_ + ".weight");
    const std::size_t nb = x.dim(0), in = x.size() / nb;
    Tensor<T> y({nb, out_, 1, 1});
    parallel_for(out_, [&](std::size_t o) {
      const T* wr = w.data() + o * in;
      for (std::size_t b = 0; b < nb; ++b) {
        const T* xr = x.data() + b * in;
        T acc = 0;
        for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
        y[b * out_ + o] = acc + (bias_ ? p.at(id_ + ".bias")[o] : T(0));
      }
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const ParamStore<T>& p, ParamStore<T>& g) override {
    const auto& w = p.at(id_ + ".weight");
    const std::size_t nb = x_.dim(0), in = x_.size() / nb;
    Tensor<T> dw(w.shape()), dx(x_.shape());
    parallel_for(out_, [&](std::size_t o) {
      T* dwr = dw.data() + o * in;
      for (std::size_t b = 0; b < nb; ++b) {
        const T d = dy[b * out_ + o];
        const T* xr = x_.data() + b * in;
        for (std::size_t i = 0; i < in; ++i) dwr[i] += d * xr[i];
      }
    });
    parallel_for(nb, [&](std::size_t b) {
      T* dxr = dx.data() + b * in;
      for (std::size_t o = 0; o < out_; ++o) {
        const T d = dy[b * out_ + o];
        const T* wr = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dxr[i] += d * wr[i];
      }
    });
    accumulate(g, id_ + ".weight", dw);
    if (bias_) accumulate(g, id_ + ".bias", channel_sums(dy));
    return dx;
  }

 private:
  std::string id_;
  std::size_t out_;
  bool bias_;
  Tensor<T> x_;
};

template <Real T>
using Sequence = std::vector<std::unique_ptr<Layer<T>>>;

template <Real T>
Tensor<T> run_forward(Sequence<T>& seq, Tensor<T> x, ParamStore<T>& p, Mode mode, Rng& rng) {
  for (auto& l : seq) x = l->forward(x, p, mode, rng);
  return x;
}

template <Real T>
Tensor<T> run_backward(Sequence<T>& seq, Tensor<T> dy, const ParamStore<T>& p, ParamStore<T>& g) {
  for (auto it = seq.rbegin(); it != seq.rend(); ++it) dy = (*it)->backward(dy, p, g);
  return dy;
}

template <Real T>
class Residual final : public Layer<T> {
 public:
  Residual(Sequence<T> body, Sequence<T> shortcut) : body_(std::move(body)), shortcut_(std::move(shortcut)) {}

  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>& p, Mode mode, Rng& rng) override {
    Tensor<T> y = run_forward(body_, x, p, mode, rng);
    y += run_forward(shortcut_, x, p, mode, rng);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const ParamStore<T>& p, ParamStore<T>& g) override {
    Tensor<T> dx = run_backward(body_, dy, p, g);
    dx += run_backward(shortcut_, dy, p, g);
    return dx;
  }

 private:
  Sequence<T> body_, shortcut_;
};

}  // namespace layers

/// A ModelSpec with its parameters, runnable forward and backward.
template <Real T>
class Model {
 public:
  Model(ModelSpec spec, ParamStore<T> params, HarmImpl impl = HarmImpl::merged, std::uint64_t dropout_seed = 0)
      : spec_(std::move(spec)), params_(std::move(params)), impl_(impl), rng_(dropout_seed) {
    check_params(spec_, params_);
    infos_ = infer_shapes(spec_);
    std::size_t cursor = 0;
    seq_ = build(spec_.layers, cursor);
  }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  const ParamStore<T>& params() const { return params_; }
  ParamStore<T>& params() { return params_; }
  Rng& rng() { return rng_; }

  /// Logits [B, classes].
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 4 || x.dim(1) != spec_.channels || x.dim(2) != spec_.height || x.dim(3) != spec_.width) {
      throw ShapeError("model '" + spec_.name + "' expects [B, " + std::to_string(spec_.channels) + ", " +
                       std::to_string(spec_.height) + ", " + std::to_string(spec_.width) + "], got " +
                       shape_str(x.shape()));
    }
    Tensor<T> y = layers::run_forward(seq_, x, params_, mode, rng_);
    return y.reshaped({x.dim(0), spec_.classes});
  }

  /// Gradients of the loss whose logit gradient is dlogits, for the last
  /// forward call. Returns learned-parameter gradients and the input gradient.
  ParamStore<T> backward(const Tensor<T>& dlogits, Tensor<T>* grad_input = nullptr) {
    ParamStore<T> grads;
    const std::size_t nb = dlogits.dim(0);
    Tensor<T> dx = layers::run_backward(seq_, dlogits.reshaped({nb, spec_.classes, 1, 1}), params_, grads);
    if (grad_input) *grad_input = std::move(dx);
    for (const auto& [name, t] : params_)
      if (!is_buffer(name) && !grads.contains(name)) grads.emplace(name, Tensor<T>(t.shape()));
    return grads;
  }

 private:
  layers::Sequence<T> build(const std::vector<LayerSpec>& list, std::size_t& cursor) {
    layers::Sequence<T> seq;
    for (const auto& l : list) {
      const LayerInfo& info = infos_.at(cursor++);
      switch (l.kind) {
        case LayerKind::conv: seq.push_back(std::make_unique<layers::Conv<T>>(info.id, l)); break;
        case LayerKind::harm: {
          auto cfg = block_config(info);
          seq.push_back(std::make_unique<layers::Harm<T>>(info.id, cfg, basis(l.kernel, l.norm), impl_));
          break;
        }
        case LayerKind::pool: seq.push_back(std::make_unique<layers::Pool<T>>(l)); break;
        case LayerKind::fc: seq.push_back(std::make_unique<layers::Fc<T>>(info.id, l)); break;
        case LayerKind::bn: seq.push_back(std::make_unique<layers::BatchNorm<T>>(info.id)); break;
        case LayerKind::relu: seq.push_back(std::make_unique<layers::Relu<T>>()); break;
        case LayerKind::dropout: seq.push_back(std::make_unique<layers::Dropout<T>>(l.p)); break;
        case LayerKind::residual: {
          auto body = build(l.body, cursor);
          auto sc = build(l.shortcut, cursor);
          seq.push_back(std::make_unique<layers::Residual<T>>(std::move(body), std::move(sc)));
          break;
        }
      }
    }
    return seq;
  }

  std::shared_ptr<const DctBasis<T>> basis(std::size_t k, BasisNorm norm) {
    const auto key = std::pair{k, norm};
    auto it = bases_.find(key);
    if (it == bases_.end()) it = bases_.emplace(key, std::make_shared<DctBasis<T>>(make_basis<T>(k, norm))).first;
    return it->second;
  }

  ModelSpec spec_;
  ParamStore<T> params_;
  HarmImpl impl_;
  Rng rng_;
  std::vector<LayerInfo> infos_;
  std::map<std::pair<std::size_t, BasisNorm>, std::shared_ptr<const DctBasis<T>>> bases_;
  layers::Sequence<T> seq_;
};

/// Mean softmax cross-entropy over the batch and its logit gradient.
template <Real T>
std::pair<double, Tensor<T>> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t nb = logits.dim(0), c = logits.dim(1);
  if (labels.size() != nb) throw ShapeError("cross-entropy: label count does not match batch");
  Tensor<T> grad(logits.shape());
  double loss = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    const T* z = logits.data() + b * c;
    double mx = z[0];
    for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, static_cast<double>(z[i]));
    double denom = 0.0;
    for (std::size_t i = 0; i < c; ++i) denom += std::exp(z[i] - mx);
    const auto y = static_cast<std::size_t>(labels[b]);
    loss += -(z[y] - mx - std::log(denom));
    for (std::size_t i = 0; i < c; ++i) {
      const double pr = std::exp(z[i] - mx) / denom;
      grad[b * c + i] = static_cast<T>((pr - (i == y ? 1.0 : 0.0)) / static_cast<double>(nb));
    }
  }
  return {loss / static_cast<double>(nb), grad};
}

}  // namespace harmonic
