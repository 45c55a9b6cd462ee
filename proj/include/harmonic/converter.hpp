#pragma once

#include <harmonic/compression.hpp>

#include <cmath>

namespace harmonic {

/// Coefficients of a K x K filter on the retained DCT filters. Orthonormal
/// basis: inner products (the least-squares optimum). L1 basis: the same
/// projection divided by each filter's scale, so synthesis with the L1 filters
/// reproduces the orthonormal reconstruction.
template <Real T>
Tensor<T> project_filter(const Tensor<T>& f, const DctBasis<double>& basis, const SpectrumSelection& sel) {
  const std::size_t k = basis.size;
  if (f.size() != k * k || sel.kernel() != k) {
    throw ShapeError("project_filter: filter " + shape_str(f.shape()) + " vs basis K=" + std::to_string(k) +
                     ", selection K=" + std::to_string(sel.kernel()));
  }
  Tensor<T> out({sel.size()});
  for (std::size_t q = 0; q < sel.size(); ++q) {
    const std::size_t flat = sel[q].u * k + sel[q].v;
    const double* psi = basis.filters.data() + flat * k * k;
    double c = 0.0;
    for (std::size_t e = 0; e < k * k; ++e) c += psi[e] * static_cast<double>(f[e]);
    out[q] = static_cast<T>(c / (basis.scale[flat] * basis.scale[flat]));
  }
  return out;
}

/// Filter sum_p w_p psi_p in double precision.
template <Real T>
Tensor<double> reconstruct_filter(const Tensor<T>& coeffs, const DctBasis<double>& basis, const SpectrumSelection& sel) {
  const std::size_t k = basis.size;
  Tensor<double> f({k, k});
  for (std::size_t q = 0; q < sel.size(); ++q) {
    const double* psi = basis.filter(sel[q].u, sel[q].v);
    for (std::size_t e = 0; e < k * k; ++e) f[e] += static_cast<double>(coeffs[q]) * psi[e];
  }
  return f;
}

struct LayerConversion {
  std::string id;
  std::size_t kernel = 0, retained = 0;
  double l2_error = 0;   // sqrt of the summed squared reconstruction error over all filters
  double max_error = 0;  // largest absolute filter-entry error
  double rms_error = 0;  // root-mean-square over filter entries
};

struct ConversionReport {
  std::vector<LayerConversion> layers;
  double total_l2_error = 0;
  double max_error = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    auto arr = nlohmann::json::array();
    for (const auto& l : layers) {
      arr.push_back({{"id", l.id}, {"kernel", l.kernel}, {"retained", l.retained}, {"l2_error", l.l2_error},
                     {"max_error", l.max_error}, {"rms_error", l.rms_error}});
    }
    j["layers"] = arr;
    j["total_l2_error"] = total_l2_error;
    j["max_error"] = max_error;
    return j;
  }
};

template <Real T>
struct Conversion {
  ModelSpec spec;
  ParamStore<T> params;
  ConversionReport report;
};

struct ConvertOptions {
  BasisNorm norm = BasisNorm::orthonormal;
};

/// Re-expresses every spatial conv layer as a harm layer (no spectrum
/// normalization) whose coefficients are the projections of the original
/// filters onto the planned frequencies (full bank when the plan has no entry).
/// 1x1 convs, fc, BN and existing harm layers are carried over unchanged.
template <Real T>
Conversion<T> convert_model(const ModelSpec& spec, const ParamStore<T>& params, const CompressionPlan* plan = nullptr,
                            const ConvertOptions& opt = {}) {
  check_params(spec, params);
  const auto infos = infer_shapes(spec);
  if (plan) {
    for (const auto& [id, sel] : plan->layers) {
      bool ok = false;
      for (const auto& info : infos) ok = ok || (info.id == id && info.layer->kind == LayerKind::conv && info.spectral());
      if (!ok) throw InvalidArgument("conversion plan names '" + id + "', which is not a spatial conv layer");
    }
  }
  Conversion<T> out{spec, params, {}};
  std::map<std::string, SpectrumSelection> chosen;
  for (const auto& info : infos) {
    const LayerSpec& l = *info.layer;
    if (l.kind != LayerKind::conv || !info.spectral()) continue;
    SpectrumSelection sel = SpectrumSelection::full(l.kernel);
    if (plan) {
      auto it = plan->layers.find(info.id);
      if (it != plan->layers.end()) sel = it->second;
    }
    if (sel.kernel() != l.kernel) throw InvalidArgument("conversion plan for " + info.id + " has the wrong kernel");
    const auto basis = make_basis<double>(l.kernel, opt.norm);
    const std::size_t m = l.out, n = info.in.c, k = l.kernel, kk = k * k, p = sel.size();
    const Tensor<T>& w = params.at(info.id + ".weight");
    Tensor<T> coeffs({m, n, p});
    LayerConversion rep{info.id, k, p, 0, 0, 0};
    double sq = 0.0;
    for (std::size_t f = 0; f < m * n; ++f) {
      Tensor<T> filt({k, k}, std::vector<T>(w.data() + f * kk, w.data() + (f + 1) * kk));
      const Tensor<T> c = project_filter(filt, basis, sel);
      std::copy(c.span().begin(), c.span().end(), coeffs.data() + f * p);
      // Reconstruct with the basis the harm layer will use.
      Tensor<double> rec({k, k});
      for (std::size_t q = 0; q < p; ++q) {
        const double* psi = basis.filter(sel[q].u, sel[q].v);
        for (std::size_t e = 0; e < kk; ++e) rec[e] += static_cast<double>(c[q]) * psi[e];
      }
      for (std::size_t e = 0; e < kk; ++e) {
        const double d = rec[e] - static_cast<double>(filt[e]);
        sq += d * d;
        rep.max_error = std::max(rep.max_error, std::abs(d));
      }
    }
    rep.l2_error = std::sqrt(sq);
    rep.rms_error = std::sqrt(sq / static_cast<double>(m * n * kk));
    out.report.total_l2_error += sq;
    out.report.max_error = std::max(out.report.max_error, rep.max_error);
    out.report.layers.push_back(rep);
    out.params[info.id + ".weight"] = std::move(coeffs);
    chosen.emplace(info.id, std::move(sel));
  }
  out.report.total_l2_error = std::sqrt(out.report.total_l2_error);
  for_each_layer(out.spec, [&](const std::string& id, LayerSpec& l) {
    auto it = chosen.find(id);
    if (it == chosen.end()) return;
    LayerSpec h = harm_layer(l.out, l.kernel, l.stride, l.pad, false, l.bias);
    h.norm = opt.norm;
    set_layer_selection(h, it->second);
    l = std::move(h);
  });
  out.spec.name = spec.name + "-harm";
  check_params(out.spec, out.params);
  return out;
}

}  // namespace harmonic
