#include <harmonic/alloc_hook.hpp>
#include <harmonic/bench.hpp>
#include <harmonic/container.hpp>
#include <harmonic/converter.hpp>
#include <harmonic/shift.hpp>
#include <harmonic/train.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace harmonic;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kFormat = 3, kNumerical = 4 };

struct Globals {
  std::uint64_t seed = 0;
  std::string dtype = "f32";
  std::string out;
  std::string config;
  unsigned threads = 1;
};

// Architecture flags shared by account and train.
struct ArchFlags {
  std::string arch;
  std::string spec_file;
  double scale = 1.0;
  std::optional<std::size_t> in_channels, input_size;
  std::optional<std::size_t> classes;
  std::optional<std::size_t> fc_width;
  double dropout = 0.5;
  std::string pool = "max";
  bool non_overlapping = false;
  bool no_spectrum_bn = false;
  bool conventional = false;

  void add(CLI::App* app) {
    app->add_option("--arch", arch, "preset: cnn2 cnn3 harmnet2 harmnet3 harmnet4 harmnet4-compact toy-cnn toy-harm wrn-D-W");
    app->add_option("--spec", spec_file, "model spec JSON instead of a preset");
    app->add_option("--scale", scale, "channel-width multiplier");
    app->add_option("--in-channels", in_channels, "input channels");
    app->add_option("--input-size", input_size, "input height and width");
    app->add_option("--classes", classes, "output classes (default 5, 10 for wrn)");
    app->add_option("--fc-width", fc_width, "hidden fc width of NORB presets");
    app->add_option("--dropout", dropout, "dropout probability, 0 removes the layer");
    app->add_option("--pool", pool, "max or avg")->check(CLI::IsMember({"max", "avg"}));
    app->add_flag("--non-overlapping", non_overlapping, "2x2/2 pooling instead of 3x3/2");
    app->add_flag("--no-spectrum-bn", no_spectrum_bn, "omit spectrum normalization in the first harmonic block");
    app->add_flag("--conventional", conventional, "replace harmonic blocks by plain convolutions");
  }

  ModelSpec build(std::size_t default_channels, std::size_t default_size) const {
    ModelSpec s;
    if (!spec_file.empty()) {
      std::ifstream in(spec_file);
      if (!in) throw FormatError("cannot open spec " + spec_file);
      try {
        s = spec_from_json(json::parse(in));
      } catch (const json::exception& e) {
        throw FormatError(spec_file + ": " + e.what());
      }
    } else {
      if (arch.empty()) throw InvalidArgument("one of --arch or --spec is required");
      PresetOptions o;
      o.scale = scale;
      const bool wrn = arch.starts_with("wrn");
      o.in_channels = in_channels.value_or(wrn ? 3 : default_channels);
      o.input_size = input_size.value_or(wrn ? 32 : default_size);
      o.classes = classes.value_or(wrn ? 10 : 5);
      o.fc_width = fc_width;
      o.dropout = dropout;
      o.pool = pool == "avg" ? PoolMode::avg : PoolMode::max;
      o.overlapping_pool = !non_overlapping;
      o.first_spectrum_bn = !no_spectrum_bn;
      s = preset(arch, o);
      if (no_spectrum_bn) {
        for_each_layer(s, [](const std::string&, LayerSpec& l) {
          if (l.kind == LayerKind::harm) l.spectrum_bn = false;
        });
      }
    }
    if (conventional) s = conventional_counterpart(s);
    (void)infer_shapes(s);
    return s;
  }
};

struct StrategyFlags {
  std::string strategy = "none";
  std::size_t lambda = 3;
  std::size_t alpha = 2;
  double t = 30.0;
  double threshold = 0.05;
  std::vector<std::string> overrides;
  bool include_first = false;
  std::optional<std::size_t> first_lambda;

  void add(CLI::App* app) {
    app->add_option("--strategy", strategy, "none, uniform, progressive or adaptive")
        ->check(CLI::IsMember({"none", "uniform", "progressive", "adaptive"}));
    app->add_option("--lambda", lambda, "uniform: retained diagonal levels");
    app->add_option("--alpha", alpha, "progressive: lower bound on lambda");
    app->add_option("--t", t, "progressive: lambda = floor(t / depth)");
    app->add_option("--threshold", threshold, "adaptive: minimum share of L1 weight mass");
    app->add_option("--override", overrides, "progressive: RES=LAMBDA for layers at output resolution RES");
    app->add_flag("--include-first", include_first, "also compress the first spectral layer");
    app->add_option("--first-lambda", first_lambda, "fixed lambda for the first spectral layer");
  }

  bool active() const { return strategy != "none"; }

  CompressionStrategy make() const {
    if (strategy == "uniform") return Uniform{lambda};
    if (strategy == "adaptive") return Adaptive{threshold};
    Progressive p{alpha, t, {}};
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw InvalidArgument("--override expects RES=LAMBDA, got '" + o + "'");
      try {
        p.overrides[std::stoul(o.substr(0, eq))] = std::stoul(o.substr(eq + 1));
      } catch (const std::logic_error&) {
        throw InvalidArgument("--override expects RES=LAMBDA, got '" + o + "'");
      }
    }
    return p;
  }

  PlanOptions options() const {
    PlanOptions po;
    po.exempt_first = !include_first;
    po.first_lambda = first_lambda;
    return po;
  }
};

// "synth" or "norb:DIR".
struct DataFlags {
  std::string data = "synth";
  std::size_t per_class = 100;
  std::size_t test_per_class = 50;
  double brightness_lo = 0.0, brightness_hi = 0.0;
  std::uint64_t data_seed = 1000;

  void add(CLI::App* app) {
    app->add_option("--data", data, "synth or norb:DIR");
    app->add_option("--per-class", per_class, "synthetic training samples per class");
    app->add_option("--test-per-class", test_per_class, "synthetic test samples per class");
    app->add_option("--brightness-lo", brightness_lo, "synthetic brightness offset lower bound");
    app->add_option("--brightness-hi", brightness_hi, "synthetic brightness offset upper bound");
    app->add_option("--data-seed", data_seed, "synthetic data seed (test split uses seed + 1)");
  }

  bool is_norb() const { return data.starts_with("norb:"); }

  Dataset load(bool train_split, std::size_t size, std::size_t channels) const {
    if (is_norb()) {
      const auto files = small_norb_files(data.substr(5), train_split ? "training" : "testing");
      return load_small_norb(files[0], files[1], files[2]);
    }
    if (data != "synth") throw InvalidArgument("--data must be 'synth' or 'norb:DIR', got '" + data + "'");
    SynthOptions o;
    o.per_class = train_split ? per_class : test_per_class;
    o.size = size;
    o.channels = channels;
    o.brightness_lo = brightness_lo;
    o.brightness_hi = brightness_hi;
    o.seed = data_seed + (train_split ? 0 : 1);
    return synth_shapes(o);
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
}

std::string fmt(double v, int prec = 12) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

// ---- basis -------------------------------------------------------------------

template <Real T>
int cmd_basis(std::size_t size, const std::string& norm, std::optional<std::size_t> lambda, const Globals& g) {
  const auto basis = make_basis<T>(size, parse_basis_norm(norm));
  const auto sel = lambda ? SpectrumSelection::triangle(size, *lambda) : SpectrumSelection::full(size);
  json j{{"size", size}, {"norm", norm}, {"dtype", g.dtype}, {"filters", json::array()}};
  std::cout << "# K=" << size << " norm=" << norm << " filters=" << sel.size() << "\n";
  for (std::size_t q = 0; q < sel.size(); ++q) {
    const auto [u, v] = sel[q];
    const T* f = basis.filter(u, v);
    std::vector<double> vals(f, f + size * size);
    std::cout << "(" << u << "," << v << ")";
    for (double x : vals) std::cout << ' ' << fmt(x);
    std::cout << '\n';
    j["filters"].push_back({{"u", u}, {"v", v}, {"values", vals}});
  }
  if (!g.out.empty()) write_text(g.out, j.dump(2));
  return kOk;
}

// ---- shift-check ---------------------------------------------------------------

int cmd_shift(std::size_t n, std::size_t k, std::int64_t z, std::size_t sweep, const Globals& g) {
  auto one = [&](std::size_t nn, std::size_t kk, std::int64_t zz, Rng& rng) {
    std::vector<double> base(nn);
    for (auto& v : base) v = rng.uniform(-1.0, 1.0);
    const auto span = static_cast<std::int64_t>(nn);
    const auto ext = parity_periodic_extension(base, kk, -8 * span, 8 * span + 4 * span * (std::abs(zz) + 1));
    return verify_shift_equivalence(ext, nn, kk, zz);
  };
  Rng rng(g.seed);
  json j = json::array();
  double worst = 0;
  std::size_t checked = 0;
  if (sweep > 0) {
    for (std::size_t nn = 1; nn <= sweep; ++nn)
      for (std::size_t kk = 1; kk < nn; ++kk)
        for (std::int64_t zz = -2; zz <= 2; ++zz) {
          if (!sine_shift_delta(static_cast<std::int64_t>(nn), static_cast<std::int64_t>(kk), zz).is_integer()) continue;
          const auto r = one(nn, kk, zz, rng);
          worst = std::max(worst, r.residual);
          ++checked;
          j.push_back({{"n", nn}, {"k", kk}, {"z", zz}, {"delta", r.delta.str()}, {"residual", r.residual}});
        }
    std::cout << "checked=" << checked << " max_residual=" << fmt(worst, 6) << '\n';
  } else {
    const auto r = one(n, k, z, rng);
    worst = r.residual;
    std::cout << "n=" << n << " k=" << k << " z=" << z << " delta=" << r.delta.str() << " sine=" << fmt(r.sine)
              << " shifted_cosine=" << fmt(r.shifted_cosine) << " residual=" << fmt(r.residual, 6) << '\n';
    j.push_back({{"n", n}, {"k", k}, {"z", z}, {"delta", r.delta.str()}, {"residual", r.residual}});
  }
  if (!g.out.empty()) write_text(g.out, j.dump(2));
  if (worst >= 1e-9) throw NumericalError("shift residual " + fmt(worst, 6) + " exceeds 1e-9");
  return kOk;
}

// ---- account -------------------------------------------------------------------

int cmd_account(const ArchFlags& af, const StrategyFlags& sf, const std::string& weights, bool as_json,
                const Globals& g) {
  ModelSpec spec = af.build(2, 96);
  std::optional<SavedModel<double>> saved;
  if (!weights.empty()) {
    saved = load_model<double>(weights);
    spec = saved->spec;
  }
  std::optional<CompressionPlan> pl;
  if (sf.active()) pl = plan<double>(spec, sf.make(), sf.options(), saved ? &saved->params : nullptr);
  const auto rep = account(spec, pl ? &*pl : nullptr);
  const auto j = rep.to_json();
  if (as_json) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << std::left << std::setw(16) << "layer" << std::setw(10) << "kind" << std::right << std::setw(6) << "P"
              << std::setw(14) << "params conv" << std::setw(14) << "params harm" << std::setw(16) << "MACs conv"
              << std::setw(16) << "MACs 2-stage" << std::setw(16) << "MACs merged" << '\n';
    for (const auto& l : rep.layers) {
      std::cout << std::left << std::setw(16) << l.id << std::setw(10) << l.kind << std::right << std::setw(6)
                << l.retained << std::setw(14) << l.params_conv << std::setw(14) << l.params_harm << std::setw(16)
                << l.macs_conv << std::setw(16) << l.macs_twostage << std::setw(16) << l.macs_merged << '\n';
    }
    std::cout << "model " << rep.model << '\n';
    std::cout << "total params conv " << rep.params_conv << '\n';
    std::cout << "total params harmonic " << rep.params_harm << '\n';
    std::cout << "total MACs conv " << rep.macs_conv << " two-stage " << rep.macs_twostage << " merged "
              << rep.macs_merged << '\n';
  }
  if (!g.out.empty()) write_text(g.out, j.dump(2));
  return kOk;
}

// ---- convert / compress --------------------------------------------------------

template <Real T>
int cmd_convert(const std::string& in, const StrategyFlags& sf, const std::string& norm, const std::string& report,
                const Globals& g) {
  if (g.out.empty()) throw InvalidArgument("convert: --out <model-file> is required");
  const auto src = load_model<T>(in);
  std::optional<CompressionPlan> pl;
  if (sf.active()) {
    const auto p64 = cast_params<double>(src.params);
    pl = plan<double>(src.spec, sf.make(), sf.options(), &p64);
  }
  const auto conv = convert_model(src.spec, src.params, pl ? &*pl : nullptr, ConvertOptions{parse_basis_norm(norm)});
  save_model(g.out, conv.spec, conv.params);
  for (const auto& l : conv.report.layers) {
    std::cout << l.id << " K=" << l.kernel << " retained=" << l.retained << " l2_error=" << fmt(l.l2_error, 6)
              << " max_error=" << fmt(l.max_error, 6) << " rms_error=" << fmt(l.rms_error, 6) << '\n';
  }
  std::cout << "converted " << conv.report.layers.size() << " layers, total_l2_error="
            << fmt(conv.report.total_l2_error, 6) << " -> " << g.out << '\n';
  const auto j = conv.report.to_json();
  if (!report.empty()) write_text(report, j.dump(2));
  return kOk;
}

template <Real T>
int cmd_compress(const std::string& in, const StrategyFlags& sf, const std::string& report, const Globals& g) {
  if (g.out.empty()) throw InvalidArgument("compress: --out <model-file> is required");
  if (!sf.active()) throw InvalidArgument("compress: --strategy is required");
  const auto src = load_model<T>(in);
  const auto p64 = cast_params<double>(src.params);
  const auto pl = plan<double>(src.spec, sf.make(), sf.options(), &p64);
  // Conv layers are converted first so that every planned layer is harmonic.
  CompressionPlan conv_part, harm_part;
  for (const auto& info : infer_shapes(src.spec)) {
    auto it = pl.layers.find(info.id);
    if (it == pl.layers.end()) continue;
    (info.layer->kind == LayerKind::conv ? conv_part : harm_part).layers.insert(*it);
  }
  auto conv = convert_model(src.spec, src.params, &conv_part);
  const auto applied = apply_plan(conv.spec, conv.params, harm_part);
  save_model(g.out, applied.spec, applied.params);
  json j = json::array();
  for (const auto& l : conv.report.layers) {
    std::cout << l.id << " retained=" << l.retained << " error=" << fmt(l.l2_error, 6) << '\n';
    j.push_back({{"id", l.id}, {"retained", l.retained}, {"error", l.l2_error}});
  }
  for (const auto& l : applied.report) {
    std::cout << l.id << " retained=" << l.retained << " dropped=" << l.dropped << " error=" << fmt(l.error, 6) << '\n';
    j.push_back({{"id", l.id}, {"retained", l.retained}, {"dropped", l.dropped}, {"error", l.error}});
  }
  const auto before = account(src.spec), after = account(applied.spec);
  std::cout << "params " << before.params_harm << " -> " << after.params_harm << " -> " << g.out << '\n';
  if (!report.empty()) write_text(report, j.dump(2));
  return kOk;
}

// ---- train / eval --------------------------------------------------------------

template <Real T>
int cmd_train(const ArchFlags& af, const DataFlags& df, TrainConfig cfg, const std::string& impl,
              const std::string& history_path, const Globals& g) {
  const bool norb = df.is_norb();
  const ModelSpec spec = af.build(norb ? 2 : 1, norb ? 96 : 32);
  const Dataset train_set = df.load(true, spec.height, spec.channels);
  const Dataset test_set = df.load(false, spec.height, spec.channels);
  cfg.seed = g.seed;
  Rng rng(g.seed);
  Model<T> model(spec, init_params<T>(spec, rng), impl == "twostage" ? HarmImpl::twostage : HarmImpl::merged);
  std::cerr << "training " << spec.name << " (" << learned_parameter_count(spec) << " params) on " << train_set.size()
            << " samples\n";
  const auto history = train(model, train_set, &test_set, cfg, [](const EpochStats& s) {
    std::cerr << "epoch " << s.epoch << " train_loss " << fmt(s.train_loss, 5) << " train_acc " << fmt(s.train_acc, 4)
              << " test_acc " << fmt(s.test_acc, 4) << '\n';
  });
  std::ostringstream csv;
  write_history_csv(csv, history);
  if (history_path.empty()) {
    std::cout << csv.str();
  } else {
    write_text(history_path, csv.str());
  }
  if (!g.out.empty()) save_model(g.out, model.spec(), model.params());
  return kOk;
}

template <Real T>
int cmd_eval(const std::string& model_path, const DataFlags& df, const std::string& split, const Globals& g) {
  auto saved = load_model<T>(model_path);
  const Dataset data = df.load(split == "train", saved.spec.height, saved.spec.channels);
  Model<T> model(saved.spec, std::move(saved.params));
  const auto r = evaluate(model, data);
  std::cout << "samples " << data.size() << '\n';
  std::cout << "accuracy " << fmt(r.accuracy, 6) << '\n';
  std::cout << "loss " << fmt(r.loss, 6) << '\n';
  std::cout << "confusion";
  for (const auto& row : r.confusion) {
    std::cout << " [";
    for (std::size_t i = 0; i < row.size(); ++i) std::cout << (i ? " " : "") << row[i];
    std::cout << "]";
  }
  std::cout << '\n';
  if (!g.out.empty()) {
    write_text(g.out, json{{"samples", data.size()}, {"accuracy", r.accuracy}, {"loss", r.loss},
                           {"confusion", r.confusion}}
                          .dump(2));
  }
  return kOk;
}

// ---- bench ---------------------------------------------------------------------

int cmd_bench(const std::string& catalog_path, std::size_t reps, std::size_t batch, const Globals& g) {
  std::vector<BenchCase> catalog;
  if (catalog_path.empty()) {
    catalog = wrn_catalog(16, 8, batch, reps);
  } else {
    std::ifstream in(catalog_path);
    if (!in) throw FormatError("cannot open catalog " + catalog_path);
    try {
      catalog = json::parse(in).get<std::vector<BenchCase>>();
    } catch (const json::exception& e) {
      throw FormatError(catalog_path + ": " + e.what());
    }
    for (auto& c : catalog) {
      if (c.name.empty()) c.name = "case" + std::to_string(&c - catalog.data());
      c.reps = std::max(c.reps, reps);
    }
  }
  BenchOptions opt;
  opt.threads = g.threads;
  opt.seed = g.seed;
  const auto report = run_bench(catalog, opt);
  write_bench_table(std::cout, report);
  std::cout << "mac_rank_agreement " << fmt(mac_rank_agreement(report), 4) << '\n';
  std::ostringstream csv;
  write_bench_csv(csv, report);
  if (g.out.empty()) {
    std::cout << csv.str();
  } else {
    write_text(g.out, csv.str());
  }
  return kOk;
}

// ---- config file ---------------------------------------------------------------

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.starts_with(flag + "=")) return true;
  return false;
}

// Appends "--key value" for every entry of the JSON object in --config that is
// not already given on the command line.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError(path + ": config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    const std::string flag = "--" + key;
    if (has_flag(args, flag)) continue;
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back(flag);
    } else if (v.is_array()) {
      for (const auto& e : v) {
        args.push_back(flag);
        args.push_back(e.is_string() ? e.get<std::string>() : e.dump());
      }
    } else {
      args.push_back(flag);
      args.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
  }
  return args;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "error[" << kind << "]: " << msg << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Harmonic networks: DCT filter banks, harmonic blocks, compression, conversion and training"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--dtype", g.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", g.out, "output file (model, CSV or JSON depending on the subcommand)");
  app.add_option("--config", g.config, "JSON object whose keys mirror flag names");
  app.add_option("--threads", g.threads, "worker threads for conv kernels")->check(CLI::PositiveNumber);

  auto* basis = app.add_subcommand("basis", "print the DCT filter bank");
  std::size_t basis_size = 3;
  std::string basis_norm = "orthonormal";
  std::optional<std::size_t> basis_lambda;
  basis->add_option("--size", basis_size, "filter size K")->check(CLI::PositiveNumber);
  basis->add_option("--norm", basis_norm, "orthonormal or l1")->check(CLI::IsMember({"orthonormal", "l1"}));
  basis->add_option("--lambda", basis_lambda, "only list filters with u + v < lambda");

  auto* shift = app.add_subcommand("shift-check", "verify the sine-via-shifted-cosine identity");
  std::size_t shift_n = 8, shift_k = 2, shift_sweep = 0;
  std::int64_t shift_z = 0;
  shift->add_option("--n", shift_n, "window length N")->check(CLI::PositiveNumber);
  shift->add_option("--k", shift_k, "frequency k");
  shift->add_option("--z", shift_z, "integer z in delta = N(1+4z)/(2k)");
  shift->add_option("--sweep", shift_sweep, "check every integer-shift (N, k, z) with N up to this value");

  auto* acc = app.add_subcommand("account", "parameter and multiply-add accounting");
  ArchFlags acc_arch;
  StrategyFlags acc_strat;
  std::string acc_weights;
  bool acc_json = false;
  acc_arch.add(acc);
  acc_strat.add(acc);
  acc->add_option("--model", acc_weights, "model file (spec and weights; needed by adaptive)");
  acc->add_flag("--json", acc_json, "print the report as JSON");

  auto* conv = app.add_subcommand("convert", "re-express spatial convolutions as harmonic blocks");
  std::string conv_in, conv_norm = "orthonormal", conv_report;
  StrategyFlags conv_strat;
  conv->add_option("--in", conv_in, "source model file")->required();
  conv->add_option("--norm", conv_norm, "basis normalization")->check(CLI::IsMember({"orthonormal", "l1"}));
  conv->add_option("--report", conv_report, "write the conversion report as JSON");
  conv_strat.add(conv);

  auto* comp = app.add_subcommand("compress", "drop DCT coefficients per a compression strategy");
  std::string comp_in, comp_report;
  StrategyFlags comp_strat;
  comp->add_option("--in", comp_in, "source model file")->required();
  comp->add_option("--report", comp_report, "write the truncation report as JSON");
  comp_strat.add(comp);

  auto* tr = app.add_subcommand("train", "train a preset on synthetic shapes or small NORB");
  ArchFlags tr_arch;
  DataFlags tr_data;
  TrainConfig tr_cfg;
  std::string tr_impl = "merged", tr_history;
  std::size_t aug_pad = 0;
  bool aug_flip = false;
  double aug_brightness = 0, aug_contrast = 0;
  tr_arch.add(tr);
  tr_data.add(tr);
  tr->add_option("--epochs", tr_cfg.epochs, "epochs");
  tr->add_option("--lr", tr_cfg.lr, "learning rate");
  tr->add_option("--momentum", tr_cfg.momentum, "SGD momentum");
  tr->add_option("--weight-decay", tr_cfg.weight_decay, "L2 weight decay");
  tr->add_option("--batch-size", tr_cfg.batch_size, "mini-batch size");
  tr->add_option("--lr-decay", tr_cfg.lr_decay, "learning-rate factor at each step");
  tr->add_option("--lr-steps", tr_cfg.lr_steps, "epochs after which the rate decays")->delimiter(',');
  tr->add_option("--impl", tr_impl, "harmonic block formulation")->check(CLI::IsMember({"merged", "twostage"}));
  tr->add_option("--history", tr_history, "write the per-epoch CSV here instead of stdout");
  tr->add_option("--augment-pad", aug_pad, "zero padding before random crops");
  tr->add_flag("--flip", aug_flip, "random horizontal flips");
  tr->add_option("--augment-brightness", aug_brightness, "random additive brightness range");
  tr->add_option("--augment-contrast", aug_contrast, "random contrast range");

  auto* ev = app.add_subcommand("eval", "evaluate a saved model");
  std::string ev_model, ev_split = "test";
  DataFlags ev_data;
  ev->add_option("--model", ev_model, "model file")->required();
  ev->add_option("--split", ev_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  ev_data.add(ev);

  auto* bench = app.add_subcommand("bench", "time conv, two-stage and merged blocks");
  std::string bench_catalog;
  std::size_t bench_reps = 5, bench_batch = 1;
  bench->add_option("--catalog", bench_catalog, "JSON list of cases (default: WRN-16-8 layer shapes)");
  bench->add_option("--reps", bench_reps, "timed repetitions per path (>= 3)");
  bench->add_option("--batch", bench_batch, "batch size of the default catalog")->check(CLI::PositiveNumber);

  std::vector<std::string> args;
  for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
  try {
    std::vector<std::string> forward(args.rbegin(), args.rend());
    forward = expand_config(std::move(forward));
    args.assign(forward.rbegin(), forward.rend());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    std::cout << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kOk;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return fail("usage", e.what(), kUsage);
  } catch (const FormatError& e) {
    return fail("format", e.what(), kFormat);
  }

  const bool f64 = g.dtype == "f64";
  set_num_threads(g.threads);
  try {
    if (*basis) return f64 ? cmd_basis<double>(basis_size, basis_norm, basis_lambda, g)
                           : cmd_basis<float>(basis_size, basis_norm, basis_lambda, g);
    if (*shift) return cmd_shift(shift_n, shift_k, shift_z, shift_sweep, g);
    if (*acc) return cmd_account(acc_arch, acc_strat, acc_weights, acc_json, g);
    if (*conv) return f64 ? cmd_convert<double>(conv_in, conv_strat, conv_norm, conv_report, g)
                          : cmd_convert<float>(conv_in, conv_strat, conv_norm, conv_report, g);
    if (*comp) return f64 ? cmd_compress<double>(comp_in, comp_strat, comp_report, g)
                          : cmd_compress<float>(comp_in, comp_strat, comp_report, g);
    if (*tr) {
      if (aug_pad || aug_flip || aug_brightness > 0 || aug_contrast > 0) {
        tr_cfg.augment = AugmentOptions{aug_pad, aug_flip, aug_brightness, aug_contrast};
      }
      return f64 ? cmd_train<double>(tr_arch, tr_data, tr_cfg, tr_impl, tr_history, g)
                 : cmd_train<float>(tr_arch, tr_data, tr_cfg, tr_impl, tr_history, g);
    }
    if (*ev) return f64 ? cmd_eval<double>(ev_model, ev_data, ev_split, g) : cmd_eval<float>(ev_model, ev_data, ev_split, g);
    if (*bench) return cmd_bench(bench_catalog, bench_reps, bench_batch, g);
  } catch (const InvalidArgument& e) {
    return fail("usage", e.what(), kUsage);
  } catch (const FormatError& e) {
    return fail("format", e.what(), kFormat);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), kNumerical);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kInternal);
  }
  return kUsage;
}
