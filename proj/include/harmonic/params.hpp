#pragma once

#include <harmonic/harmonic_block.hpp>
#include <harmonic/model_spec.hpp>

#include <cmath>
#include <map>
#include <string>

namespace harmonic {

/// Named parameter tensors of a model, "<layer id>.<field>".
template <Real T>
using ParamStore = std::map<std::string, Tensor<T>>;

/// Running statistics are stored with the parameters but are not learned.
inline bool is_buffer(std::string_view name) {
  for (std::string_view suffix : {".running_mean", ".running_var", ".bn_mean", ".bn_var"}) {
    if (name.ends_with(suffix)) return true;
  }
  return false;
}

/// Harmonic block configuration for a harm layer.
inline HarmonicBlockConfig block_config(const LayerInfo& info) {
  const LayerSpec& l = *info.layer;
  if (l.kind != LayerKind::harm) throw InvalidArgument("layer " + info.id + " is not a harm layer");
  HarmonicBlockConfig c;
  c.in_channels = info.in.c;
  c.out_channels = l.out;
  c.kernel = l.kernel;
  c.geom = ConvGeometry{l.kernel, l.stride, l.pad};
  c.selection = layer_selection(l);
  c.use_spectrum_bn = l.spectrum_bn;
  c.basis_norm = l.norm;
  c.has_bias = l.bias;
  return c;
}

/// Every parameter name with its shape, in layer order.
inline std::vector<std::pair<std::string, Shape>> param_shapes(const ModelSpec& spec) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& info : infer_shapes(spec)) {
    const LayerSpec& l = *info.layer;
    const std::string& id = info.id;
    switch (l.kind) {
      case LayerKind::conv:
        out.push_back({id + ".weight", {l.out, info.in.c, l.kernel, l.kernel}});
        if (l.bias) out.push_back({id + ".bias", {l.out}});
        break;
      case LayerKind::harm: {
        const std::size_t p = layer_selection(l).size();
        out.push_back({id + ".weight", {l.out, info.in.c, p}});
        if (l.bias) out.push_back({id + ".bias", {l.out}});
        if (l.spectrum_bn) {
          for (const char* f : {".bn_mean", ".bn_var", ".bn_gamma", ".bn_beta"}) {
            out.push_back({id + f, {info.in.c * p}});
          }
        }
        break;
      }
      case LayerKind::fc:
        out.push_back({id + ".weight", {l.out, info.in.numel()}});
        if (l.bias) out.push_back({id + ".bias", {l.out}});
        break;
      case LayerKind::bn:
        for (const char* f : {".gamma", ".beta", ".running_mean", ".running_var"}) {
          out.push_back({id + f, {info.in.c}});
        }
        break;
      default:
        break;
    }
  }
  return out;
}

/// Learned parameter count (running statistics excluded).
inline std::size_t learned_parameter_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& [name, shape] : param_shapes(spec))
    if (!is_buffer(name)) n += shape_numel(shape);
  return n;
}

/// Gaussian weights with variance 2/fan-in, zero biases, identity normalization.
template <Real T>
ParamStore<T> init_params(const ModelSpec& spec, Rng& rng) {
  ParamStore<T> store;
  for (const auto& [name, shape] : param_shapes(spec)) {
    if (name.ends_with(".weight")) {
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      store.emplace(name, rng.normal_tensor<T>(shape, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in))));
    } else if (name.ends_with("_var") || name.ends_with("gamma")) {
      store.emplace(name, Tensor<T>(shape, T(1)));
    } else {
      store.emplace(name, Tensor<T>(shape, T(0)));
    }
  }
  return store;
}

/// Checks that store holds exactly the tensors spec requires.
template <Real T>
void check_params(const ModelSpec& spec, const ParamStore<T>& store) {
  const auto shapes = param_shapes(spec);
  for (const auto& [name, shape] : shapes) {
    auto it = store.find(name);
    if (it == store.end()) throw ShapeError("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("parameter '" + name + "' is " + shape_str(it->second.shape()) + ", expected " +
                       shape_str(shape));
    }
  }
  if (store.size() != shapes.size()) {
    for (const auto& [name, t] : store) {
      bool known = false;
      for (const auto& s : shapes) known = known || s.first == name;
      if (!known) throw ShapeError("unexpected parameter '" + name + "'");
    }
  }
}

/// Pulls a harm layer's parameters out of a store.
template <Real T>
HarmonicBlockParams<T> block_params(const ParamStore<T>& store, const std::string& id, const HarmonicBlockConfig& cfg) {
  HarmonicBlockParams<T> p;
  p.weights = store.at(id + ".weight");
  if (cfg.has_bias) p.bias = store.at(id + ".bias");
  if (cfg.use_spectrum_bn) {
    p.bn = SpectrumBnState<T>{store.at(id + ".bn_mean"), store.at(id + ".bn_var"), store.at(id + ".bn_gamma"),
                              store.at(id + ".bn_beta")};
  }
  return p;
}

template <Real T>
void store_block_params(ParamStore<T>& store, const std::string& id, const HarmonicBlockParams<T>& p) {
  store[id + ".weight"] = p.weights;
  if (p.bias) store[id + ".bias"] = *p.bias;
  if (p.bn) {
    store[id + ".bn_mean"] = p.bn->running_mean;
    store[id + ".bn_var"] = p.bn->running_var;
    store[id + ".bn_gamma"] = p.bn->gamma;
    store[id + ".bn_beta"] = p.bn->beta;
  }
}

template <Real U, Real T>
ParamStore<U> cast_params(const ParamStore<T>& store) {
  ParamStore<U> out;
  for (const auto& [name, t] : store) out.emplace(name, t.template cast<U>());
  return out;
}

}  // namespace harmonic
