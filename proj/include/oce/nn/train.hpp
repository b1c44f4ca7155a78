#pragma once

// Regressor wrapper, mini-batch training with random temporal crops, and
// sliding-window inference.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "oce/error.hpp"
#include "oce/nn/adam.hpp"
#include "oce/nn/densenet.hpp"
#include "oce/nn/resize.hpp"
#include "oce/seed.hpp"

namespace oce::nn {

struct TrainConfig {
  int epochs = 200;
  int batch = 14;
  double lr = 1e-5;
  int temporal_crop = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
    if (temporal_crop < 1) throw ConfigError("train: temporal crop must be >= 1");
  }
};

// Scales each window to zero mean and unit variance; phase-difference amplitude
// follows the excitation strength and must not carry the label.
inline void standardize(float* x, std::size_t n) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(n);
  const double inv = var > 1e-20 ? 1.0 / std::sqrt(var) : 1.0;
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>((x[i] - mean) * inv);
}

// Network plus the input geometry and label scaling it was trained with.
template <class S>
class Regressor {
 public:
  Regressor(const ModelSpec& spec, int depth, int lateral, int window, std::uint64_t seed)
      : depth_(depth), lateral_(lateral), window_(window), net_(std::make_unique<DenseNet<S>>(spec, seed)) {
    if (depth < 1 || lateral < 1 || window < 1) throw ConfigError("regressor: input dimensions must be >= 1");
  }

  DenseNet<S>& net() { return *net_; }
  const ModelSpec& spec() const { return net_->spec(); }
  int depth() const { return depth_; }
  int lateral() const { return lateral_; }
  int window() const { return window_; }
  double label_mean() const { return label_mean_; }
  double label_scale() const { return label_scale_; }
  void set_label_scaling(double mean, double scale) {
    if (!(scale > 0.0)) throw DomainError("regressor: label scale must be > 0");
    label_mean_ = mean;
    label_scale_ = scale;
  }

  void check_input(const NetInput& x) const {
    if (x.depth != depth_ || x.lateral != lateral_)
      throw DataError("model expects inputs of " + std::to_string(depth_) + " x " + std::to_string(lateral_) +
                      " (depth x lateral), got " + std::to_string(x.depth) + " x " + std::to_string(x.lateral));
    if (x.time < window_)
      throw DataError("sequence of " + std::to_string(x.time) + " frames is shorter than the " +
                      std::to_string(window_) + "-frame window");
  }

  // Copies standardised windows [start, start + window) into a batch tensor.
  Tensor<S> batch(const std::vector<const NetInput*>& inputs, const std::vector<int>& starts) const {
    Tensor<S> x({static_cast<int>(inputs.size()), 1, depth_, lateral_, window_});
    std::vector<float> tmp(static_cast<std::size_t>(depth_) * lateral_ * window_);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const NetInput& in = *inputs[i];
      check_input(in);
      if (starts[i] < 0 || starts[i] + window_ > in.time) throw DomainError("window outside the sequence");
      for (int d = 0; d < depth_; ++d)
        for (int l = 0; l < lateral_; ++l) {
          const float* src = in.data.data() + (static_cast<std::size_t>(d) * lateral_ + l) * in.time + starts[i];
          std::copy(src, src + window_, tmp.data() + (static_cast<std::size_t>(d) * lateral_ + l) * window_);
        }
      standardize(tmp.data(), tmp.size());
      std::copy(tmp.begin(), tmp.end(), x.sample(static_cast<int>(i)));
    }
    return x;
  }

  // Predictions in kPa for the given windows (evaluation mode).
  std::vector<double> predict(const std::vector<const NetInput*>& inputs, const std::vector<int>& starts) {
    const auto out = net_->forward(batch(inputs, starts), false);
    std::vector<double> e(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) e[i] = label_mean_ + label_scale_ * static_cast<double>(out[i]);
    return e;
  }

 private:
  int depth_;
  int lateral_;
  int window_;
  double label_mean_ = 0.0;
  double label_scale_ = 1.0;
  std::unique_ptr<DenseNet<S>> net_;
};

struct Sample {
  const NetInput* input = nullptr;
  double label_kpa = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;       // kPa^2
  double validation_mse = 0.0;  // kPa^2; NaN without a validation set
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_validation_mse = std::numeric_limits<double>::infinity();
};

// Everything needed to continue training bit-identically.
template <class S>
struct TrainState {
  int next_epoch = 0;
  long long adam_steps = 0;
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;
  TrainHistory history;
  std::vector<std::vector<S>> best_params;
  std::vector<std::vector<double>> best_buffers;
};

template <class S>
std::vector<std::vector<S>> snapshot_params(DenseNet<S>& net) {
  std::vector<std::vector<S>> out;
  for (auto* p : net.params()) out.emplace_back(p->value.begin(), p->value.end());
  return out;
}

template <class S>
std::vector<std::vector<double>> snapshot_buffers(DenseNet<S>& net) {
  std::vector<std::vector<double>> out;
  for (auto* b : net.buffers()) out.push_back(*b);
  return out;
}

template <class S>
void restore(DenseNet<S>& net, const std::vector<std::vector<S>>& params, const std::vector<std::vector<double>>& buffers) {
  const auto& ps = net.params();
  auto bs = net.buffers();
  if (params.size() != ps.size() || buffers.size() != bs.size()) throw DataError("model: snapshot does not match");
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value.assign(params[i].begin(), params[i].end());
  for (std::size_t i = 0; i < bs.size(); ++i) *bs[i] = buffers[i];
}

// Mean squared error (kPa^2) on fixed central windows, evaluation mode.
template <class S>
double evaluate_mse(Regressor<S>& model, const std::vector<Sample>& samples, int batch) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (std::size_t first = 0; first < samples.size(); first += batch) {
    const std::size_t last = std::min(samples.size(), first + static_cast<std::size_t>(batch));
    std::vector<const NetInput*> in;
    std::vector<int> starts;
    for (std::size_t i = first; i < last; ++i) {
      in.push_back(samples[i].input);
      starts.push_back((samples[i].input->time - model.window()) / 2);
    }
    const auto pred = model.predict(in, starts);
    for (std::size_t i = first; i < last; ++i) total += std::pow(pred[i - first] - samples[i].label_kpa, 2);
  }
  return total / static_cast<double>(samples.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains from `state` (fresh or resumed) up to cfg.epochs and restores the
// best-validation parameters at the end. Per-epoch randomness is derived from
// (seed, epoch), so a resumed run repeats the uninterrupted one exactly.
template <class S>
TrainHistory train(Regressor<S>& model, const std::vector<Sample>& training, const std::vector<Sample>& validation,
                   const TrainConfig& cfg, TrainState<S>& state, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (training.empty()) throw DataError("train: empty training set");
  if (cfg.temporal_crop != model.window())
    throw ConfigError("train: temporal crop " + std::to_string(cfg.temporal_crop) + " differs from model window " +
                      std::to_string(model.window()));
  for (const auto& s : training) model.check_input(*s.input);
  for (const auto& s : validation) model.check_input(*s.input);

  auto& net = model.net();
  if (state.next_epoch == 0) {
    double mean = 0.0;
    for (const auto& s : training) mean += s.label_kpa;
    mean /= static_cast<double>(training.size());
    double var = 0.0;
    for (const auto& s : training) var += (s.label_kpa - mean) * (s.label_kpa - mean);
    const double sd = std::sqrt(var / static_cast<double>(training.size()));
    model.set_label_scaling(mean, sd > 0.0 ? sd : 1.0);
  }

  Adam<S> adam(net.params(), {cfg.lr});
  if (state.adam_steps > 0) {
    adam.set_steps(state.adam_steps);
    adam.first_moments() = state.adam_m;
    adam.second_moments() = state.adam_v;
  }

  const double scale2 = model.label_scale() * model.label_scale();
  for (int epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(training.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double sum_sq = 0.0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch));
      std::vector<const NetInput*> in;
      std::vector<int> starts;
      std::vector<double> target;
      for (std::size_t i = first; i < last; ++i) {
        const auto& s = training[order[i]];
        in.push_back(s.input);
        std::uniform_int_distribution<int> pick(0, s.input->time - cfg.temporal_crop);
        starts.push_back(pick(rng));
        target.push_back((s.label_kpa - model.label_mean()) / model.label_scale());
      }
      const auto x = model.batch(in, starts);
      net.zero_grad();
      const auto out = net.forward(x, true);
      const double n = static_cast<double>(out.size());
      std::vector<S> dout(out.size());
      double batch_sq = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double r = static_cast<double>(out[i]) - target[i];
        batch_sq += r * r;
        dout[i] = static_cast<S>(2.0 * r / n);
      }
      if (!std::isfinite(batch_sq))
        throw NumericError("training diverged: non-finite loss in epoch " + std::to_string(epoch + 1) + " at batch " +
                           std::to_string(first / cfg.batch + 1));
      sum_sq += batch_sq;
      net.backward(dout);
      adam.step();
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_mse = sum_sq / static_cast<double>(training.size()) * scale2;
    rec.validation_mse = evaluate_mse(model, validation, cfg.batch);
    state.history.epochs.push_back(rec);
    const double score = validation.empty() ? rec.train_mse : rec.validation_mse;
    if (score < state.history.best_validation_mse) {
      state.history.best_validation_mse = score;
      state.history.best_epoch = rec.epoch;
      state.best_params = snapshot_params(net);
      state.best_buffers = snapshot_buffers(net);
    }
    state.next_epoch = epoch + 1;
    state.adam_steps = adam.steps();
    state.adam_m = adam.first_moments();
    state.adam_v = adam.second_moments();
    if (on_epoch) on_epoch(rec);
  }
  return state.history;
}

template <class S>
TrainHistory train(Regressor<S>& model, const std::vector<Sample>& training, const std::vector<Sample>& validation,
                   const TrainConfig& cfg) {
  TrainState<S> state;
  auto history = train(model, training, validation, cfg, state);
  restore(model.net(), state.best_params, state.best_buffers);
  return history;
}

struct SlidingResult {
  double mean = 0.0;
  std::vector<int> starts;
  std::vector<double> per_window;
};

// Window starts 0, stride, 2*stride, ... while start + window <= length.
inline std::vector<int> window_starts(int length, int window, int stride) {
  if (window < 1 || stride < 1) throw DomainError("sliding window: window and stride must be >= 1");
  if (length < window)
    throw DataError("sequence of " + std::to_string(length) + " frames is shorter than the " + std::to_string(window) +
                    "-frame window");
  std::vector<int> starts;
  for (int s = 0; s + window <= length; s += stride) starts.push_back(s);
  return starts;
}

// Mean of per-window predictions; `predict` maps a batch of starts to estimates.
inline SlidingResult infer_sliding(int length, int window, int stride,
                                   const std::function<std::vector<double>(const std::vector<int>&)>& predict,
                                   int batch = 16) {
  SlidingResult r;
  r.starts = window_starts(length, window, stride);
  for (std::size_t first = 0; first < r.starts.size(); first += batch) {
    const std::size_t last = std::min(r.starts.size(), first + static_cast<std::size_t>(batch));
    const std::vector<int> chunk(r.starts.begin() + first, r.starts.begin() + last);
    const auto out = predict(chunk);
    if (out.size() != chunk.size()) throw DomainError("sliding window: predictor returned a wrong count");
    r.per_window.insert(r.per_window.end(), out.begin(), out.end());
  }
  double sum = 0.0;
  for (double v : r.per_window) sum += v;
  r.mean = sum / static_cast<double>(r.per_window.size());
  return r;
}

template <class S>
SlidingResult infer_sliding(Regressor<S>& model, const NetInput& input, int stride = 8) {
  model.check_input(input);
  return infer_sliding(input.time, model.window(), stride, [&](const std::vector<int>& starts) {
    return model.predict(std::vector<const NetInput*>(starts.size(), &input), starts);
  });
}

}  // namespace oce::nn
