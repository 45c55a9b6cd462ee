#pragma once

#include <harmonic/alloc_stats.hpp>
#include <harmonic/compression.hpp>
#include <harmonic/harmonic_block.hpp>
#include <harmonic/parallel.hpp>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace harmonic {

/// One layer shape to time. a x b is the output resolution; the input is
/// (a*stride) x (b*stride) with K/2 zero padding.
struct BenchCase {
  std::string name;
  std::size_t n = 16, m = 16, k = 3, a = 16, b = 16, stride = 1;
  std::size_t lambda = 0;  // 0 keeps the full spectrum
  std::size_t batch = 1;
  std::size_t reps = 5, warmup = 1;

  std::size_t retained() const { return selection().size(); }
  SpectrumSelection selection() const {
    return lambda == 0 ? SpectrumSelection::full(k) : SpectrumSelection::triangle(k, std::min(lambda, 2 * k - 1));
  }
  void validate() const {
    if (reps < 3) throw InvalidArgument("bench case '" + name + "': repetitions must be >= 3");
    if (n == 0 || m == 0 || k == 0 || a == 0 || b == 0 || stride == 0 || batch == 0) {
      throw InvalidArgument("bench case '" + name + "': all extents must be positive");
    }
  }
};

inline void to_json(nlohmann::json& j, const BenchCase& c) {
  j = {{"name", c.name}, {"n", c.n}, {"m", c.m}, {"k", c.k}, {"a", c.a}, {"b", c.b}, {"stride", c.stride},
       {"lambda", c.lambda}, {"batch", c.batch}, {"reps", c.reps}, {"warmup", c.warmup}};
}

inline void from_json(const nlohmann::json& j, BenchCase& c) {
  static const std::set<std::string> known{"name", "n", "m", "k", "a", "b", "stride", "lambda", "batch", "reps", "warmup"};
  for (const auto& [key, v] : j.items()) {
    if (!known.contains(key)) throw InvalidArgument("bench case: unknown field '" + key + "'");
  }
  BenchCase d;
  c.name = j.value("name", d.name);
  c.n = j.value("n", d.n);
  c.m = j.value("m", d.m);
  c.k = j.value("k", d.k);
  c.a = j.value("a", d.a);
  c.b = j.value("b", d.b);
  c.stride = j.value("stride", d.stride);
  c.lambda = j.value("lambda", d.lambda);
  c.batch = j.value("batch", d.batch);
  c.reps = j.value("reps", d.reps);
  c.warmup = j.value("warmup", d.warmup);
}

enum class BenchPath { conv, twostage, merged };

inline const char* to_string(BenchPath p) {
  switch (p) {
    case BenchPath::conv: return "conv";
    case BenchPath::twostage: return "twostage";
    case BenchPath::merged: return "merged";
  }
  return "?";
}

struct BenchRow {
  BenchCase c;
  BenchPath path = BenchPath::conv;
  std::uint64_t macs = 0;
  double median_ms = 0;
  double ns_per_mac = 0;
  std::size_t peak_bytes = 0;  // 0 when allocation tracking is not linked in
  unsigned threads = 1;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double max_path_disagreement = 0;  // largest |twostage - merged| relative to max |merged|

  const BenchRow& row(const std::string& name, BenchPath p) const {
    for (const auto& r : rows)
      if (r.c.name == name && r.path == p) return r;
    throw InvalidArgument("bench report: no row for " + name + "/" + to_string(p));
  }

  /// Sum over cases of the path's median time.
  double total_ms(BenchPath p) const {
    double t = 0;
    for (const auto& r : rows)
      if (r.path == p) t += r.median_ms;
    return t;
  }
};

/// Analytic multiply-adds of one path for the whole batch.
inline std::uint64_t bench_macs(const BenchCase& c, BenchPath p) {
  const std::uint64_t ab = c.a * c.b * c.batch, kk = c.k * c.k, pr = c.retained();
  switch (p) {
    case BenchPath::conv: return c.n * c.m * kk * ab;
    case BenchPath::twostage: return twostage_macs(c.n, c.m, c.k, pr, c.a, c.b) * c.batch;
    case BenchPath::merged: return c.n * c.m * kk * ab + c.n * c.m * pr * kk;
  }
  return 0;
}

struct BenchOptions {
  unsigned threads = 1;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;  // f32 agreement required before timing, relative to max |output|
};

namespace detail {

template <typename Fn>
double median_ms(Fn&& fn, std::size_t warmup, std::size_t reps) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> t;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t.size() % 2 ? t[t.size() / 2] : 0.5 * (t[t.size() / 2 - 1] + t[t.size() / 2]);
}

template <typename Fn>
std::size_t peak_of(Fn&& fn) {
  if (!alloc::hooked) return 0;
  alloc::PeakScope scope;
  fn();
  return scope.bytes();
}

}  // namespace detail

/// Times the conventional convolution, the two-stage block and the merged
/// block in f32 on every case. Outputs of the three paths are compared first
/// and a NumericalError is raised when they disagree.
inline BenchReport run_bench(const std::vector<BenchCase>& catalog, const BenchOptions& opt = {}) {
  if (catalog.empty()) throw InvalidArgument("bench: empty catalog");
  const unsigned saved = num_threads();
  set_num_threads(opt.threads);
  BenchReport report;
  Rng rng(opt.seed);
  try {
    for (const auto& c : catalog) {
      c.validate();
      HarmonicBlockConfig cfg;
      cfg.in_channels = c.n;
      cfg.out_channels = c.m;
      cfg.kernel = c.k;
      cfg.geom = ConvGeometry{c.k, c.stride, c.k / 2};
      cfg.selection = c.selection();
      const auto basis = make_basis<float>(c.k);
      const auto params = init_block_params<float>(cfg, rng);
      const auto x = rng.uniform_tensor<float>({c.batch, c.n, c.a * c.stride, c.b * c.stride}, 0.0, 1.0);
      const auto filters = synthesize_filters(params, cfg, basis);

      // Correctness before timing.
      const auto y2 = forward_twostage(x, cfg, params, basis);
      const auto ym = forward_merged(x, cfg, params, basis);
      const auto yc = conv2d(x, filters, cfg.geom);
      if (ym.dim(2) != c.a || ym.dim(3) != c.b) throw ShapeError("bench case '" + c.name + "': output size mismatch");
      double scale = 1e-30, diff = 0;
      for (std::size_t i = 0; i < ym.size(); ++i) {
        scale = std::max(scale, static_cast<double>(std::abs(ym[i])));
        diff = std::max(diff, static_cast<double>(std::abs(y2[i] - ym[i])));
        if (yc[i] != ym[i]) throw NumericalError("bench case '" + c.name + "': conv and merged paths disagree");
      }
      report.max_path_disagreement = std::max(report.max_path_disagreement, diff / scale);
      if (diff / scale > opt.tolerance) {
        throw NumericalError("bench case '" + c.name + "': two-stage and merged outputs differ by " +
                             std::to_string(diff / scale) + " (relative)");
      }

      auto run = [&](BenchPath p) {
        switch (p) {
          case BenchPath::conv: return conv2d(x, filters, cfg.geom);
          case BenchPath::twostage: return forward_twostage(x, cfg, params, basis);
          case BenchPath::merged: return forward_merged(x, cfg, params, basis);
        }
        return Tensor<float>();
      };
      for (BenchPath p : {BenchPath::conv, BenchPath::twostage, BenchPath::merged}) {
        BenchRow r;
        r.c = c;
        r.path = p;
        r.threads = opt.threads;
        r.macs = bench_macs(c, p);
        r.median_ms = detail::median_ms([&] { (void)run(p); }, c.warmup, c.reps);
        r.ns_per_mac = r.macs ? r.median_ms * 1e6 / static_cast<double>(r.macs) : 0.0;
        r.peak_bytes = detail::peak_of([&] { (void)run(p); });
        report.rows.push_back(r);
      }
    }
  } catch (...) {
    set_num_threads(saved);
    throw;
  }
  set_num_threads(saved);
  return report;
}

/// Distinct 3x3 layer shapes of WRN-depth-width on 32x32 inputs.
inline std::vector<BenchCase> wrn_catalog(std::size_t depth, std::size_t width, std::size_t batch = 1,
                                          std::size_t reps = 5) {
  const auto spec = conventional_counterpart(wrn_preset(depth, width, 3, 10, 0.0));
  std::vector<BenchCase> out;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> seen;
  for (const auto& info : infer_shapes(spec)) {
    const auto& l = *info.layer;
    if (l.kind != LayerKind::conv || l.kernel != 3) continue;
    const auto key = std::tuple{info.in.c, l.out, info.out.h, l.stride};
    if (!seen.insert(key).second) continue;
    BenchCase c;
    c.n = info.in.c;
    c.m = l.out;
    c.k = 3;
    c.a = info.out.h;
    c.b = info.out.w;
    c.stride = l.stride;
    c.batch = batch;
    c.reps = reps;
    c.name = "wrn" + std::to_string(depth) + "-" + std::to_string(width) + ":" + std::to_string(c.n) + "to" +
             std::to_string(c.m) + "@" + std::to_string(c.a) + "/s" + std::to_string(c.stride);
    out.push_back(c);
  }
  return out;
}

/// Fraction of adjacent pairs, in order of predicted MACs, whose measured times
/// are also non-decreasing. Rows of every path are pooled.
inline double mac_rank_agreement(const BenchReport& r) {
  std::vector<const BenchRow*> rows;
  for (const auto& row : r.rows) rows.push_back(&row);
  std::stable_sort(rows.begin(), rows.end(), [](auto* x, auto* y) { return x->macs < y->macs; });
  if (rows.size() < 2) return 1.0;
  std::size_t ok = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) ok += rows[i]->median_ms >= rows[i - 1]->median_ms;
  return static_cast<double>(ok) / static_cast<double>(rows.size() - 1);
}

inline void write_bench_csv(std::ostream& out, const BenchReport& r) {
  out << "case,path,n,m,k,a,b,stride,lambda,retained,batch,threads,macs,median_ms,ns_per_mac,peak_bytes\n";
  out << std::setprecision(9);
  for (const auto& x : r.rows) {
    out << x.c.name << ',' << to_string(x.path) << ',' << x.c.n << ',' << x.c.m << ',' << x.c.k << ',' << x.c.a << ','
        << x.c.b << ',' << x.c.stride << ',' << x.c.lambda << ',' << x.c.retained() << ',' << x.c.batch << ','
        << x.threads << ',' << x.macs << ',' << x.median_ms << ',' << x.ns_per_mac << ',' << x.peak_bytes << '\n';
  }
}

inline void write_bench_table(std::ostream& out, const BenchReport& r) {
  out << std::left << std::setw(34) << "case" << std::setw(10) << "path" << std::right << std::setw(14) << "MACs"
      << std::setw(12) << "median ms" << std::setw(10) << "ns/MAC" << std::setw(14) << "peak bytes" << '\n';
  for (const auto& x : r.rows) {
    out << std::left << std::setw(34) << x.c.name << std::setw(10) << to_string(x.path) << std::right << std::setw(14)
        << x.macs << std::setw(12) << std::fixed << std::setprecision(3) << x.median_ms << std::setw(10)
        << std::setprecision(4) << x.ns_per_mac << std::setw(14) << x.peak_bytes << '\n';
    out.unsetf(std::ios::fixed);
  }
  const double t2 = r.total_ms(BenchPath::twostage), tm = r.total_ms(BenchPath::merged);
  out << "total two-stage " << std::setprecision(4) << t2 << " ms, merged " << tm << " ms, merged/two-stage "
      << (t2 > 0 ? tm / t2 : 0.0) << '\n';
}

}  // namespace harmonic
