#pragma once

#include <harmonic/params.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <variant>

namespace harmonic {

/// Same lambda in every layer.
struct Uniform {
  std::size_t lambda = 3;
};

/// lambda = max(alpha, min(2K-1, floor(t / depth))); overrides map a layer's
/// output resolution to a fixed lambda.
struct Progressive {
  std::size_t alpha = 2;
  double t = 30.0;
  std::map<std::size_t, std::size_t> overrides;
};

/// Drops a frequency when its share of the layer's L1 weight mass is below t.
struct Adaptive {
  double t = 0.05;
};

using CompressionStrategy = std::variant<Uniform, Progressive, Adaptive>;

struct PlanOptions {
  bool exempt_first = true;
  /// Lambda for the first spectral layer; takes precedence over exempt_first.
  std::optional<std::size_t> first_lambda;
};

/// Retained frequencies per spectral layer id. Layers without an entry keep
/// their current selection.
struct CompressionPlan {
  std::map<std::string, SpectrumSelection> layers;
};

inline std::size_t progressive_lambda(const Progressive& s, std::size_t kernel, std::size_t depth) {
  if (depth == 0) throw InvalidArgument("progressive: depth counts from 1");
  if (s.t <= 0) throw InvalidArgument("progressive: T must be positive");
  const auto by_depth = static_cast<std::size_t>(std::floor(s.t / static_cast<double>(depth)));
  return std::max(s.alpha, std::min(2 * kernel - 1, by_depth));
}

namespace detail {

inline SpectrumSelection current_selection(const LayerSpec& l) {
  return l.kind == LayerKind::harm ? layer_selection(l) : SpectrumSelection::full(l.kernel);
}

inline SpectrumSelection intersect(const SpectrumSelection& cur, const SpectrumSelection& want, const std::string& id) {
  std::vector<Frequency> keep;
  for (const auto& f : cur.indices())
    if (want.contains(f)) keep.push_back(f);
  if (keep.empty()) throw InvalidArgument("plan leaves layer " + id + " without frequencies");
  return SpectrumSelection::from_indices(cur.kernel(), std::move(keep));
}

inline SpectrumSelection triangle_within(const LayerSpec& l, std::size_t lambda, const std::string& id) {
  lambda = std::clamp<std::size_t>(lambda, 1, 2 * l.kernel - 1);
  return intersect(current_selection(l), select_spectrum(l.kernel, lambda), id);
}

/// Per-frequency coefficient magnitudes of a layer, summed over (m, n), in the
/// order of the layer's current selection.
template <Real T>
std::vector<double> l1_mass(const LayerInfo& info, const ParamStore<T>& weights) {
  const LayerSpec& l = *info.layer;
  const auto it = weights.find(info.id + ".weight");
  if (it == weights.end()) throw InvalidArgument("adaptive plan: no weights for layer " + info.id);
  const Tensor<T>& w = it->second;
  const auto sel = current_selection(l);
  const std::size_t p = sel.size();
  std::vector<double> mass(p, 0.0);
  if (l.kind == LayerKind::harm) {
    if (w.rank() != 3 || w.dim(2) != p) throw ShapeError("adaptive plan: weights of " + info.id + " do not match");
    for (std::size_t i = 0; i < w.size(); ++i) mass[i % p] += std::abs(static_cast<double>(w[i]));
    return mass;
  }
  // Conventional filters: measure their orthonormal DCT coefficients.
  const std::size_t k = l.kernel, kk = k * k;
  if (w.rank() != 4 || w.dim(2) != k) throw ShapeError("adaptive plan: weights of " + info.id + " do not match");
  const auto basis = make_basis<double>(k);
  for (std::size_t f = 0; f < w.size() / kk; ++f) {
    for (std::size_t q = 0; q < p; ++q) {
      const double* psi = basis.filter(sel[q].u, sel[q].v);
      double c = 0.0;
      for (std::size_t e = 0; e < kk; ++e) c += psi[e] * static_cast<double>(w[f * kk + e]);
      mass[q] += std::abs(c);
    }
  }
  return mass;
}

}  // namespace detail

/// Keeps frequency q iff shares[q] >= t; never returns an empty set (the
/// largest share survives).
inline std::vector<std::size_t> adaptive_keep(const std::vector<double>& shares, double t) {
  std::vector<std::size_t> keep;
  for (std::size_t q = 0; q < shares.size(); ++q)
    if (!(shares[q] < t)) keep.push_back(q);
  if (keep.empty() && !shares.empty()) {
    keep.push_back(static_cast<std::size_t>(std::max_element(shares.begin(), shares.end()) - shares.begin()));
  }
  return keep;
}

template <Real T = double>
CompressionPlan plan(const ModelSpec& spec, const CompressionStrategy& strategy, const PlanOptions& opt = {},
                     const ParamStore<T>* weights = nullptr) {
  if (const auto* a = std::get_if<Adaptive>(&strategy)) {
    if (!weights) throw InvalidArgument("adaptive plan requires trained weights");
    if (!(a->t > 0.0 && a->t < 1.0)) throw InvalidArgument("adaptive threshold must lie in (0, 1)");
  }
  const auto infos = infer_shapes(spec);
  if (const auto* pr = std::get_if<Progressive>(&strategy)) {
    for (const auto& [res, lam] : pr->overrides) {
      bool found = false;
      for (const auto& info : infos) found = found || (info.spectral() && info.out.h == res);
      if (!found) throw InvalidArgument("progressive override for resolution " + std::to_string(res) +
                                        " matches no layer of '" + spec.name + "'");
    }
  }
  CompressionPlan out;
  for (const auto& info : infos) {
    if (!info.spectral()) continue;
    const LayerSpec& l = *info.layer;
    if (info.spectral_depth == 1) {
      if (opt.first_lambda) {
        out.layers.emplace(info.id, detail::triangle_within(l, *opt.first_lambda, info.id));
        continue;
      }
      if (opt.exempt_first) continue;
    }
    SpectrumSelection sel = std::visit(
        [&](const auto& s) -> SpectrumSelection {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::same_as<S, Uniform>) {
            return detail::triangle_within(l, s.lambda, info.id);
          } else if constexpr (std::same_as<S, Progressive>) {
            auto it = s.overrides.find(info.out.h);
            const std::size_t lam =
                it != s.overrides.end() ? it->second : progressive_lambda(s, l.kernel, info.spectral_depth);
            return detail::triangle_within(l, lam, info.id);
          } else {
            const auto cur = detail::current_selection(l);
            auto mass = detail::l1_mass(info, *weights);
            double total = 0.0;
            for (double v : mass) total += v;
            for (double& v : mass) v = total > 0 ? v / total : 0.0;
            std::vector<Frequency> keep;
            for (auto q : adaptive_keep(mass, s.t)) keep.push_back(cur[q]);
            return SpectrumSelection::from_indices(l.kernel, std::move(keep));
          }
        },
        strategy);
    out.layers.emplace(info.id, std::move(sel));
  }
  return out;
}

// ---- plan application -----------------------------------------------------

struct LayerTruncation {
  std::string id;
  std::size_t retained = 0, dropped = 0;
  /// Root-sum-square of the dropped coefficients, each scaled to the
  /// orthonormal basis, i.e. the L2 norm of the removed filter content.
  double error = 0.0;
};

template <Real T>
struct AppliedPlan {
  ModelSpec spec;
  ParamStore<T> params;
  std::vector<LayerTruncation> report;
};

/// Keeps the planned coefficients of every harm layer and drops the rest.
template <Real T>
AppliedPlan<T> apply_plan(const ModelSpec& spec, const ParamStore<T>& params, const CompressionPlan& pl) {
  check_params(spec, params);
  AppliedPlan<T> out{spec, params, {}};
  std::map<std::string, LayerInfo> by_id;
  const auto infos = infer_shapes(spec);
  for (const auto& info : infos) by_id.emplace(info.id, info);
  for (const auto& [id, sel] : pl.layers) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidArgument("plan names unknown layer '" + id + "'");
    if (it->second.layer->kind != LayerKind::harm) {
      throw InvalidArgument("plan layer '" + id + "' is " + to_string(it->second.layer->kind) +
                            ", not harm; convert it first");
    }
  }
  for (const auto& info : infos) {
    auto pit = pl.layers.find(info.id);
    if (pit == pl.layers.end()) continue;
    const LayerSpec& l = *info.layer;
    const auto cur = layer_selection(l);
    const auto& sel = pit->second;
    if (sel.kernel() != l.kernel) throw InvalidArgument("plan for layer " + info.id + " has the wrong kernel");
    if (!sel.is_subset_of(cur)) {
      throw InvalidArgument("plan for layer " + info.id + " keeps frequencies the layer does not have");
    }
    const auto basis = make_basis<double>(l.kernel, l.norm);
    const std::size_t n = info.in.c, m = l.out, p0 = cur.size(), p1 = sel.size();
    std::vector<std::size_t> src(p1);
    for (std::size_t q = 0; q < p1; ++q) src[q] = *cur.position(sel[q]);
    LayerTruncation rep{info.id, p1, p0 - p1, 0.0};
    const Tensor<T>& w = params.at(info.id + ".weight");
    Tensor<T> nw({m, n, p1});
    double dropped = 0.0;
    for (std::size_t i = 0; i < m * n; ++i) {
      for (std::size_t q = 0; q < p1; ++q) nw[i * p1 + q] = w[i * p0 + src[q]];
      for (std::size_t q = 0; q < p0; ++q) {
        if (sel.contains(cur[q])) continue;
        const double c = static_cast<double>(w[i * p0 + q]) * basis.scale[cur[q].u * l.kernel + cur[q].v];
        dropped += c * c;
      }
    }
    rep.error = std::sqrt(dropped);
    out.params[info.id + ".weight"] = std::move(nw);
    if (l.spectrum_bn) {
      for (const char* f : {".bn_mean", ".bn_var", ".bn_gamma", ".bn_beta"}) {
        const Tensor<T>& t = params.at(info.id + f);
        Tensor<T> nt({n * p1});
        for (std::size_t c = 0; c < n; ++c)
          for (std::size_t q = 0; q < p1; ++q) nt[c * p1 + q] = t[c * p0 + src[q]];
        out.params[info.id + f] = std::move(nt);
      }
    }
    out.report.push_back(rep);
  }
  for_each_layer(out.spec, [&](const std::string& id, LayerSpec& l) {
    auto pit = pl.layers.find(id);
    if (pit != pl.layers.end()) set_layer_selection(l, pit->second);
  });
  check_params(out.spec, out.params);
  return out;
}

// ---- accounting -----------------------------------------------------------

struct LayerCost {
  std::string id;
  std::string kind;
  std::size_t in_channels = 0, out_channels = 0, kernel = 0, out_h = 0, out_w = 0, retained = 0;
  std::uint64_t params_conv = 0, params_harm = 0;
  std::uint64_t macs_conv = 0, macs_twostage = 0, macs_merged = 0;
};

struct CostReport {
  std::string model;
  std::vector<LayerCost> layers;
  std::uint64_t params_conv = 0, params_harm = 0;
  std::uint64_t macs_conv = 0, macs_twostage = 0, macs_merged = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = model;
    auto arr = nlohmann::json::array();
    for (const auto& l : layers) {
      arr.push_back({{"id", l.id},
                     {"kind", l.kind},
                     {"in", l.in_channels},
                     {"out", l.out_channels},
                     {"kernel", l.kernel},
                     {"out_h", l.out_h},
                     {"out_w", l.out_w},
                     {"retained", l.retained},
                     {"params_conv", l.params_conv},
                     {"params_harm", l.params_harm},
                     {"macs_conv", l.macs_conv},
                     {"macs_twostage", l.macs_twostage},
                     {"macs_merged", l.macs_merged}});
    }
    j["layers"] = arr;
    j["params_conv"] = params_conv;
    j["params_harm"] = params_harm;
    j["macs_conv"] = macs_conv;
    j["macs_twostage"] = macs_twostage;
    j["macs_merged"] = macs_merged;
    return j;
  }
};

/// Two-stage MACs of one block: transform N*P*K^2*A*B plus combination N*P*M*A*B.
inline std::uint64_t twostage_macs(std::uint64_t n, std::uint64_t m, std::uint64_t k, std::uint64_t p,
                                   std::uint64_t a, std::uint64_t b) {
  return n * p * k * k * a * b + n * p * m * a * b;
}

/// Merged MACs: one convolution N*M*K^2*A*B plus filter synthesis N*M*P*K^2.
inline std::uint64_t merged_macs(std::uint64_t n, std::uint64_t m, std::uint64_t k, std::uint64_t p,
                                 std::uint64_t a, std::uint64_t b) {
  return n * m * k * k * a * b + n * m * p * k * k;
}

/// Parameters and multiply-adds of a spec, reading every spectral layer both as
/// a conventional convolution and as a harmonic block (with the plan's or the
/// layer's own selection). BN scale/shift and biases are parameters; only
/// multiply-adds of conv/harm/fc layers are counted.
inline CostReport account(const ModelSpec& spec, const CompressionPlan* pl = nullptr) {
  CostReport r;
  r.model = spec.name;
  for (const auto& info : infer_shapes(spec)) {
    const LayerSpec& l = *info.layer;
    LayerCost c;
    c.id = info.id;
    c.kind = to_string(l.kind);
    c.in_channels = info.in.c;
    c.out_channels = info.out.c;
    c.out_h = info.out.h;
    c.out_w = info.out.w;
    const std::uint64_t n = info.in.c, m = l.out, a = info.out.h, b = info.out.w, k = l.kernel;
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::harm: {
        c.kernel = l.kernel;
        const std::uint64_t bias = l.bias ? m : 0;
        c.params_conv = n * m * k * k + bias;
        c.macs_conv = n * m * k * k * a * b;
        if (!info.spectral()) {
          c.retained = 1;
          c.params_harm = c.params_conv;
          c.macs_twostage = c.macs_merged = c.macs_conv;
          break;
        }
        SpectrumSelection sel = detail::current_selection(l);
        if (pl) {
          auto it = pl->layers.find(info.id);
          if (it != pl->layers.end()) sel = it->second;
        }
        const std::uint64_t p = sel.size();
        c.retained = sel.size();
        c.params_harm = n * p * m + bias + (l.kind == LayerKind::harm && l.spectrum_bn ? 2 * n * p : 0);
        c.macs_twostage = twostage_macs(n, m, k, p, a, b);
        c.macs_merged = merged_macs(n, m, k, p, a, b);
        break;
      }
      case LayerKind::fc: {
        const std::uint64_t in = info.in.numel();
        c.params_conv = c.params_harm = in * m + (l.bias ? m : 0);
        c.macs_conv = c.macs_twostage = c.macs_merged = in * m;
        break;
      }
      case LayerKind::bn:
        c.params_conv = c.params_harm = 2 * n;
        break;
      default:
        break;
    }
    r.params_conv += c.params_conv;
    r.params_harm += c.params_harm;
    r.macs_conv += c.macs_conv;
    r.macs_twostage += c.macs_twostage;
    r.macs_merged += c.macs_merged;
    r.layers.push_back(std::move(c));
  }
  return r;
}

}  // namespace harmonic
