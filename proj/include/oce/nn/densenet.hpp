#pragma once

// Spatio-temporal DenseNet regressor: average pooling and convolution stem, dense
// blocks joined by transitions, global average pooling and a scalar output.

#include <random>
#include <string>
#include <vector>

#include "oce/error.hpp"
#include "oce/nn/layers.hpp"

namespace oce::nn {

enum class InputKind { st_map = 0, seq2dt = 1, seq3dt = 2 };

inline std::string to_string(InputKind k) {
  switch (k) {
    case InputKind::st_map: return "st_map";
    case InputKind::seq2dt: return "seq2dt";
    case InputKind::seq3dt: return "seq3dt";
  }
  return "?";
}

inline InputKind input_kind_from_string(const std::string& s) {
  if (s == "st_map") return InputKind::st_map;
  if (s == "seq2dt") return InputKind::seq2dt;
  if (s == "seq3dt") return InputKind::seq3dt;
  throw ConfigError("unknown input kind '" + s + "' (expected st_map, seq2dt or seq3dt)");
}

inline constexpr std::size_t kReferenceParameterCount = 109690;
inline constexpr std::size_t kMinParameterCount = 76000;
inline constexpr std::size_t kMaxParameterCount = 143000;

struct ModelSpec {
  InputKind kind = InputKind::seq3dt;
  int blocks = 3;
  int layers_per_block = 4;
  int growth = 8;
  int init_channels = 16;
  int kernel = 3;
  bool check_param_budget = true;

  // Depth and lateral stride of every pooling stage; time is never downsampled.
  int spatial_stride() const { return kind == InputKind::seq3dt ? 2 : 1; }

  void validate() const {
    if (blocks < 1 || layers_per_block < 1 || growth < 1 || init_channels < 1)
      throw ConfigError("model: blocks, layers_per_block, growth and init_channels must be >= 1");
    if (kernel != 3) throw ConfigError("model: only kernel size 3 is supported");
  }
};

template <class S>
class DenseNet {
 public:
  explicit DenseNet(const ModelSpec& spec, std::uint64_t seed = 0) : spec_(spec) {
    spec.validate();
    stem_ = Conv3d<S>("stem.conv", 1, spec.init_channels, 3, true);
    int c = spec.init_channels;
    for (int b = 0; b < spec.blocks; ++b) {
      Block block;
      block.in_channels = c;
      for (int j = 0; j < spec.layers_per_block; ++j) {
        const std::string name = "block" + std::to_string(b) + ".layer" + std::to_string(j);
        block.layers.push_back({BatchNormReLU<S>(name + ".bn", c), Conv3d<S>(name + ".conv", c, spec.growth, 3, false),
                                Tensor<S>()});
        c += spec.growth;
      }
      block.out_channels = c;
      blocks_.push_back(std::move(block));
      if (b + 1 < spec.blocks) {
        const std::string name = "transition" + std::to_string(b);
        transitions_.push_back({BatchNormReLU<S>(name + ".bn", c), Conv3d<S>(name + ".conv", c, c / 2, 1, false), {}, {}, {}, {}});
        c /= 2;
      }
    }
    final_bn_ = BatchNormReLU<S>("final.bn", c);
    head_ = RegressionHead<S>("head", c);
    collect_params();
    const std::size_t count = parameter_count();
    if (spec.check_param_budget && (count < kMinParameterCount || count > kMaxParameterCount))
      throw ConfigError("model: " + std::to_string(count) + " trainable parameters outside [" +
                        std::to_string(kMinParameterCount) + ", " + std::to_string(kMaxParameterCount) + "]");
    std::mt19937_64 rng(seed);
    stem_.init(rng);
    for (auto& b : blocks_)
      for (auto& l : b.layers) l.conv.init(rng);
    for (auto& t : transitions_) t.conv.init(rng);
    head_.init(rng);
  }

  DenseNet(const DenseNet&) = delete;
  DenseNet& operator=(const DenseNet&) = delete;

  const ModelSpec& spec() const { return spec_; }
  const std::vector<Param<S>*>& params() { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : params_) n += p->size();
    return n;
  }

  // BatchNorm running statistics, in a fixed order (mean then variance per layer).
  std::vector<std::vector<double>*> buffers() {
    std::vector<std::vector<double>*> out;
    auto add = [&](BatchNormReLU<S>& bn) {
      out.push_back(&bn.running_mean());
      out.push_back(&bn.running_var());
    };
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      for (auto& l : blocks_[b].layers) add(l.bn);
      if (b < transitions_.size()) add(transitions_[b].bn);
    }
    add(final_bn_);
    return out;
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  // Temporal length of every feature map between input and global pooling, as seen
  // in the last forward call.
  const std::vector<int>& trunk_time_sizes() const { return time_sizes_; }

  // x: (n, 1, depth, lateral, time). Returns one scalar per sample.
  std::vector<S> forward(const Tensor<S>& x, bool train) {
    if (x.shape.c != 1) throw DomainError("model: expected a single input channel, got " + to_string(x.shape));
    time_sizes_.clear();
    train_ = train;
    input_shape_ = x.shape;
    stem_stride_ = stride_for(x.shape);
    avg_pool_forward(x, stem_stride_, stem_in_);
    time_sizes_.push_back(stem_in_.shape.t);
    const Shape g = stem_in_.shape;

    Tensor<S>* current = nullptr;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      Block& block = blocks_[b];
      const Shape grid = b == 0 ? g : block_grid_[b];
      if (b == 0) block_grid_.assign(blocks_.size(), grid);
      block.stack.resize({grid.n, block.out_channels, grid.d, grid.l, grid.t});
      if (b == 0) {
        stem_.forward(view(stem_in_, 1), grid.d, grid.l, grid.t, block.stack.data.data(), block.stack.shape.per_sample());
      } else {
        const Tensor<S>& src = transitions_[b - 1].pooled;
        for (int i = 0; i < grid.n; ++i)
          std::copy(src.sample(i), src.sample(i) + src.shape.per_sample(), block.stack.sample(i));
      }
      int c = block.in_channels;
      for (auto& layer : block.layers) {
        layer.bn.forward(view(std::as_const(block.stack), c), grid, train, layer.activated);
        layer.conv.forward(view(std::as_const(layer.activated), c), grid.d, grid.l, grid.t,
                           block.stack.channel(0, c), block.stack.shape.per_sample());
        c += spec_.growth;
        time_sizes_.push_back(grid.t);
      }
      current = &block.stack;
      if (b < transitions_.size()) {
        Transition& tr = transitions_[b];
        tr.bn.forward(view(std::as_const(block.stack), block.out_channels), grid, train, tr.activated);
        tr.reduced.resize({grid.n, tr.conv.out_channels(), grid.d, grid.l, grid.t});
        tr.conv.forward(view(std::as_const(tr.activated), block.out_channels), grid.d, grid.l, grid.t,
                        tr.reduced.data.data(), tr.reduced.shape.per_sample());
        tr.stride = stride_for(tr.reduced.shape);
        avg_pool_forward(tr.reduced, tr.stride, tr.pooled);
        block_grid_[b + 1] = tr.pooled.shape;
        time_sizes_.push_back(tr.pooled.shape.t);
      }
    }
    final_bn_.forward(view(std::as_const(*current), current->shape.c), current->shape, train, final_act_);
    return head_.forward(final_act_);
  }

  // Accumulates parameter gradients for d(loss)/d(output).
  void backward(const std::vector<S>& dout) {
    if (!train_) throw DomainError("model: backward needs a training-mode forward pass");
    Tensor<S> d_act;
    head_.backward(dout, final_act_.shape, d_act);
    Tensor<S> d_stack;
    d_stack.resize(blocks_.back().stack.shape);
    final_bn_.backward(d_act, view(d_stack, d_stack.shape.c));

    for (std::size_t bi = blocks_.size(); bi-- > 0;) {
      Block& block = blocks_[bi];
      const Shape grid = block.stack.shape;
      Tensor<S> d_activated;
      for (std::size_t j = block.layers.size(); j-- > 0;) {
        auto& layer = block.layers[j];
        const int c = block.in_channels + static_cast<int>(j) * spec_.growth;
        d_activated.resize(layer.activated.shape);
        layer.conv.backward(view(std::as_const(layer.activated), c), grid.d, grid.l, grid.t, d_stack.channel(0, c),
                            d_stack.shape.per_sample(), d_activated.data.data(), d_activated.shape.per_sample());
        layer.bn.backward(d_activated, view(d_stack, c));
      }
      if (bi == 0) {
        stem_.backward(view(std::as_const(stem_in_), 1), grid.d, grid.l, grid.t, d_stack.data.data(),
                       d_stack.shape.per_sample(), nullptr, 0);
        break;
      }
      // d_stack's first in_channels are the gradient of the previous transition output
      Transition& tr = transitions_[bi - 1];
      Tensor<S> d_pooled(tr.pooled.shape);
      for (int i = 0; i < grid.n; ++i)
        std::copy(d_stack.sample(i), d_stack.sample(i) + d_pooled.shape.per_sample(), d_pooled.sample(i));
      Tensor<S> d_reduced;
      avg_pool_backward(d_pooled, tr.stride, tr.reduced.shape, d_reduced);
      const Block& prev = blocks_[bi - 1];
      const Shape pg = prev.stack.shape;
      Tensor<S> d_tr_act(tr.activated.shape);
      tr.conv.backward(view(std::as_const(tr.activated), prev.out_channels), pg.d, pg.l, pg.t, d_reduced.data.data(),
                       d_reduced.shape.per_sample(), d_tr_act.data.data(), d_tr_act.shape.per_sample());
      d_stack.resize(pg);
      tr.bn.backward(d_tr_act, view(d_stack, prev.out_channels));
    }
  }

 private:
  struct DenseLayer {
    BatchNormReLU<S> bn;
    Conv3d<S> conv;
    Tensor<S> activated;
  };
  struct Block {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<DenseLayer> layers;
    Tensor<S> stack;
  };
  struct Transition {
    BatchNormReLU<S> bn;
    Conv3d<S> conv;
    Tensor<S> activated;
    Tensor<S> reduced;
    Tensor<S> pooled;
    PoolStride stride;
  };

  PoolStride stride_for(Shape s) const {
    const int k = spec_.spatial_stride();
    return {s.d >= k ? k : 1, s.l >= k ? k : 1, 1};
  }

  void collect_params() {
    params_.clear();
    stem_.collect(params_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      for (auto& l : blocks_[b].layers) {
        l.bn.collect(params_);
        l.conv.collect(params_);
      }
      if (b < transitions_.size()) {
        transitions_[b].bn.collect(params_);
        transitions_[b].conv.collect(params_);
      }
    }
    final_bn_.collect(params_);
    head_.collect(params_);
  }

  ModelSpec spec_;
  Conv3d<S> stem_;
  std::vector<Block> blocks_;
  std::vector<Transition> transitions_;
  BatchNormReLU<S> final_bn_;
  RegressionHead<S> head_;
  std::vector<Param<S>*> params_;

  bool train_ = false;
  Shape input_shape_;
  PoolStride stem_stride_;
  Tensor<S> stem_in_;
  Tensor<S> final_act_;
  std::vector<Shape> block_grid_;
  std::vector<int> time_sizes_;
};

}  // namespace oce::nn
