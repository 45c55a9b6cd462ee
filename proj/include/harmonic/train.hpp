#pragma once

#include <harmonic/data.hpp>
#include <harmonic/nn.hpp>

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace harmonic {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double lr_decay = 0.1;
  std::vector<std::size_t> lr_steps;  // epochs (1-based) after which lr *= lr_decay
  std::uint64_t seed = 0;
  std::optional<AugmentOptions> augment;
  std::optional<double> stop_at;  // stop once test accuracy reaches this

  void validate() const {
    if (lr < 0 || momentum < 0 || weight_decay < 0 || lr_decay <= 0) {
      throw InvalidArgument("train config: rates must be non-negative");
    }
    if (batch_size == 0 || epochs == 0) throw InvalidArgument("train config: batch size and epochs must be positive");
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0, train_acc = 0;
  double test_loss = 0, test_acc = 0;
  bool operator==(const EpochStats&) const = default;
};

using History = std::vector<EpochStats>;

inline void write_history_csv(std::ostream& out, const History& h) {
  out << "epoch,train_loss,train_acc,test_loss,test_acc\n";
  out.precision(9);
  for (const auto& e : h) {
    out << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.test_loss << ',' << e.test_acc << '\n';
  }
}

struct EvalResult {
  double accuracy = 0, loss = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

template <Real T>
std::size_t argmax_row(const T* z, std::size_t c) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < c; ++i)
    if (z[i] > z[best]) best = i;
  return best;
}

/// Eval-mode accuracy, mean loss and confusion counts. Parameters and running
/// statistics are left untouched.
template <Real T>
EvalResult evaluate(Model<T>& model, const Dataset& data, std::size_t batch_size = 128) {
  data.validate();
  const std::size_t c = model.spec().classes;
  if (data.classes > c) throw ShapeError("evaluate: dataset has more classes than the model");
  EvalResult r;
  r.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor<T> logits = model.forward(data.batch<T>(idx), Mode::eval);
    std::vector<int> labels;
    for (auto i : idx) labels.push_back(data.labels[i]);
    loss += softmax_cross_entropy(logits, labels).first * static_cast<double>(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const std::size_t pred = argmax_row(logits.data() + b * c, c);
      r.confusion[static_cast<std::size_t>(labels[b])][pred]++;
      correct += pred == static_cast<std::size_t>(labels[b]);
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  r.loss = loss / static_cast<double>(data.size());
  return r;
}

/// SGD with momentum and weight decay (v = mu v + g + wd w; w -= lr v) on the
/// learned parameters. Deterministic given cfg.seed. Throws NumericalError
/// naming the epoch when the loss becomes non-finite.
template <Real T>
History train(Model<T>& model, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
              const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  train_set.validate();
  if (train_set.classes > model.spec().classes) {
    throw ShapeError("train: dataset has " + std::to_string(train_set.classes) + " classes, model " +
                     std::to_string(model.spec().classes));
  }
  Rng order_rng(cfg.seed), aug_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  model.rng() = Rng(cfg.seed + 1);
  ParamStore<T> velocity;
  for (const auto& [name, t] : model.params())
    if (!is_buffer(name)) velocity.emplace(name, Tensor<T>(t.shape()));
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t c = model.spec().classes;
  History history;
  double lr = cfg.lr;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      Tensor<T> x;
      if (cfg.augment) {
        x = augment(train_set.batch<float>(idx), *cfg.augment, aug_rng).template cast<T>();
      } else {
        x = train_set.batch<T>(idx);
      }
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train_set.labels[i]);
      const Tensor<T> logits = model.forward(x, Mode::train);
      auto [loss, dlogits] = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(loss)) throw NumericalError("training diverged at epoch " + std::to_string(epoch));
      loss_sum += loss * static_cast<double>(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b)
        correct += argmax_row(logits.data() + b * c, c) == static_cast<std::size_t>(labels[b]);
      const ParamStore<T> grads = model.backward(dlogits);
      for (auto& [name, v] : velocity) {
        Tensor<T>& w = model.params().at(name);
        const Tensor<T>& g = grads.at(name);
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = static_cast<T>(cfg.momentum * v[i] + g[i] + cfg.weight_decay * w[i]);
          w[i] = static_cast<T>(w[i] - lr * v[i]);
        }
      }
    }
    EpochStats s;
    s.epoch = epoch;
    s.train_loss = loss_sum / static_cast<double>(order.size());
    s.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!std::isfinite(s.train_loss)) throw NumericalError("training diverged at epoch " + std::to_string(epoch));
    if (test_set) {
      const auto r = evaluate(model, *test_set);
      s.test_loss = r.loss;
      s.test_acc = r.accuracy;
    }
    history.push_back(s);
    if (on_epoch) on_epoch(s);
    if (cfg.stop_at && test_set && s.test_acc >= *cfg.stop_at) break;
    for (auto step : cfg.lr_steps)
      if (step == epoch) lr *= cfg.lr_decay;
  }
  return history;
}

/// First epoch whose test accuracy reaches threshold; epochs + 1 when never.
inline std::size_t epochs_to_threshold(const History& h, double threshold) {
  for (const auto& e : h)
    if (e.test_acc >= threshold) return e.epoch;
  return h.empty() ? 1 : h.back().epoch + 1;
}

// ---- illumination protocol ---------------------------------------------------

struct IlluminationVariant {
  std::string name;
  ModelSpec spec;
};

struct IlluminationRow {
  std::string variant;
  double train_acc = 0;
  double seen_error = 0;    // test error on the training brightness regime
  double unseen_error = 0;  // test error on held-out regimes
};

/// Splits a dataset by its attribute: samples with attribute in [lo, hi] form
/// the "seen" regime, everything else the "unseen" one.
inline std::pair<Dataset, Dataset> split_by_attribute(const Dataset& d, double lo, double hi) {
  std::vector<std::size_t> in, out;
  for (std::size_t i = 0; i < d.size(); ++i) (d.attribute.at(i) >= lo && d.attribute.at(i) <= hi ? in : out).push_back(i);
  if (in.empty() || out.empty()) throw InvalidArgument("illumination split leaves an empty regime");
  return {d.subset(in), d.subset(out)};
}

/// Baseline CNN, harmonic net with DC, and harmonic net without the DC filter
/// in the first block (zero padding there, so a global offset cancels).
inline std::vector<IlluminationVariant> illumination_variants(const PresetOptions& o) {
  PresetOptions plain = o;
  plain.first_spectrum_bn = false;
  ModelSpec cnn = toy_preset("toy-cnn", plain);
  ModelSpec harm = toy_preset("toy-harm", plain);
  ModelSpec no_dc = harm;
  no_dc.layers[0].drop_dc = true;
  no_dc.layers[0].pad = 0;
  no_dc.name = "toy-harm-nodc";
  return {{"cnn", cnn}, {"harm", harm}, {"harm-nodc", no_dc}};
}

/// Trains each variant on the seen regime of train_set and reports errors on
/// the seen and unseen regimes of test_set.
template <Real T = float>
std::vector<IlluminationRow> illumination_protocol(const Dataset& train_set, const Dataset& test_set, double lo,
                                                   double hi, const std::vector<IlluminationVariant>& variants,
                                                   const TrainConfig& cfg) {
  auto [train_seen, train_unseen] = split_by_attribute(train_set, lo, hi);
  (void)train_unseen;
  auto [test_seen, test_unseen] = split_by_attribute(test_set, lo, hi);
  std::vector<IlluminationRow> rows;
  for (const auto& v : variants) {
    Rng rng(cfg.seed);
    Model<T> model(v.spec, init_params<T>(v.spec, rng));
    const auto h = train(model, train_seen, nullptr, cfg);
    IlluminationRow row;
    row.variant = v.name;
    row.train_acc = h.back().train_acc;
    row.seen_error = 1.0 - evaluate(model, test_seen).accuracy;
    row.unseen_error = 1.0 - evaluate(model, test_unseen).accuracy;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace harmonic
