#pragma once

// Building blocks with explicit forward/backward passes. Every layer caches what its
// backward pass needs from the last training-mode forward call.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "oce/nn/tensor.hpp"

namespace oce::nn {

namespace detail {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Copies channels of a (D, L, T) grid into rows padded by one zero sample at both time ends.
template <class S>
void pad_time(const S* x, int channels, std::size_t rows, int T, S* out) {
  const std::size_t Tp = static_cast<std::size_t>(T) + 2;
  for (std::size_t r = 0; r < static_cast<std::size_t>(channels) * rows; ++r) {
    S* dst = out + r * Tp;
    dst[0] = S(0);
    std::copy(x + r * T, x + (r + 1) * T, dst + 1);
    dst[Tp - 1] = S(0);
  }
}

template <class S>
void unpad_time(const S* in, int channels, std::size_t rows, int T, S* out) {
  const std::size_t Tp = static_cast<std::size_t>(T) + 2;
  for (std::size_t r = 0; r < static_cast<std::size_t>(channels) * rows; ++r)
    std::copy(in + r * Tp + 1, in + r * Tp + 1 + T, out + r * T);
}

// Calls f(k, out_col, in_col, len) for every kernel offset and every run of output
// columns whose 3x3x3 neighbour lies inside the grid along depth and lateral axes.
// Columns refer to the time-padded layout; time padding supplies the zeros there.
template <class F>
void for_each_shift(int D, int L, int T, F&& f) {
  const int Tp = T + 2;
  for (int kd = -1; kd <= 1; ++kd)
    for (int kl = -1; kl <= 1; ++kl)
      for (int kt = -1; kt <= 1; ++kt) {
        const int k = (kd + 1) * 9 + (kl + 1) * 3 + (kt + 1);
        const int d0 = std::max(0, -kd), d1 = std::min(D, D - kd);
        const int l0 = std::max(0, -kl), l1 = std::min(L, L - kl);
        if (d0 >= d1 || l0 >= l1) continue;
        if (kl == 0) {
          // whole depth range is one contiguous run
          const Eigen::Index out = (static_cast<Eigen::Index>(d0) * L) * Tp + 1;
          const Eigen::Index len = static_cast<Eigen::Index>(d1 - d0) * L * Tp - 2;
          f(k, out, out + static_cast<Eigen::Index>(kd) * L * Tp + kt, len);
          continue;
        }
        for (int d = d0; d < d1; ++d) {
          const Eigen::Index out = (static_cast<Eigen::Index>(d) * L + l0) * Tp + 1;
          const Eigen::Index in = (static_cast<Eigen::Index>(d + kd) * L + l0 + kl) * Tp + 1 + kt;
          f(k, out, in, static_cast<Eigen::Index>(l1 - l0) * Tp - 2);
        }
      }
}

}  // namespace detail

// 3-D convolution with cubic kernel 1 or 3, stride 1 and size-preserving zero padding.
// The 3x3x3 case runs as 27 shifted matrix products on a time-padded copy of the input
// instead of materialising an im2col matrix.
template <class S>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(const std::string& name, int in_channels, int out_channels, int kernel, bool bias)
      : cin_(in_channels), cout_(out_channels), k_(kernel),
        weight_(name + ".weight", static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel * kernel),
        bias_(name + ".bias", bias ? static_cast<std::size_t>(out_channels) : 0) {
    if (kernel != 1 && kernel != 3) throw DomainError("conv: kernel must be 1 or 3");
  }

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }

  void init(std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(cin_) * k_ * k_ * k_;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : weight_.value) w = static_cast<S>(normal(rng));
    std::fill(bias_.value.begin(), bias_.value.end(), S(0));
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&weight_);
    if (bias_.size() > 0) out.push_back(&bias_);
  }

  // x: n samples of cin channels on a (D, L, T) grid; y receives cout channels per
  // sample starting at y + i * y_stride.
  void forward(ChannelView<const S> x, int D, int L, int T, S* y, std::size_t y_stride) {
    const std::size_t V = static_cast<std::size_t>(D) * L * T;
    if (k_ == 1) {
      Eigen::Map<const detail::RowMat<S>> W(weight_.value.data(), cout_, cin_);
      for (int i = 0; i < x.n; ++i) {
        Eigen::Map<const detail::RowMat<S>> X(x.channel(i, 0), cin_, static_cast<Eigen::Index>(V));
        Eigen::Map<detail::RowMat<S>> Y(y + i * y_stride, cout_, static_cast<Eigen::Index>(V));
        Y.noalias() = W * X;
        add_bias(Y);
      }
      return;
    }
    split_weights();
    const std::size_t rows = static_cast<std::size_t>(D) * L;
    const auto Vp = static_cast<Eigen::Index>(rows * (T + 2));
    xp_.resize(static_cast<std::size_t>(cin_) * Vp);
    yp_.resize(static_cast<std::size_t>(cout_) * Vp);
    for (int i = 0; i < x.n; ++i) {
      detail::pad_time(x.channel(i, 0), cin_, rows, T, xp_.data());
      Eigen::Map<const detail::RowMat<S>> X(xp_.data(), cin_, Vp);
      Eigen::Map<detail::RowMat<S>> Y(yp_.data(), cout_, Vp);
      Y.setZero();
      detail::for_each_shift(D, L, T, [&](int k, Eigen::Index out, Eigen::Index in, Eigen::Index len) {
        Y.middleCols(out, len).noalias() += wk_[k] * X.middleCols(in, len);
      });
      detail::unpad_time(yp_.data(), cout_, rows, T, y + i * y_stride);
      Eigen::Map<detail::RowMat<S>> Yi(y + i * y_stride, cout_, static_cast<Eigen::Index>(V));
      add_bias(Yi);
    }
  }

  // Accumulates parameter gradients; writes (overwrites) dx when it is non-null.
  void backward(ChannelView<const S> x, int D, int L, int T, const S* dy, std::size_t dy_stride, S* dx,
                std::size_t dx_stride) {
    const std::size_t V = static_cast<std::size_t>(D) * L * T;
    if (k_ == 1) {
      Eigen::Map<const detail::RowMat<S>> W(weight_.value.data(), cout_, cin_);
      Eigen::Map<detail::RowMat<S>> dW(weight_.grad.data(), cout_, cin_);
      for (int i = 0; i < x.n; ++i) {
        Eigen::Map<const detail::RowMat<S>> X(x.channel(i, 0), cin_, static_cast<Eigen::Index>(V));
        Eigen::Map<const detail::RowMat<S>> dY(dy + i * dy_stride, cout_, static_cast<Eigen::Index>(V));
        dW.noalias() += dY * X.transpose();
        accumulate_bias(dY);
        if (dx) {
          Eigen::Map<detail::RowMat<S>> dX(dx + i * dx_stride, cin_, static_cast<Eigen::Index>(V));
          dX.noalias() = W.transpose() * dY;
        }
      }
      return;
    }
    split_weights();
    const std::size_t rows = static_cast<std::size_t>(D) * L;
    const auto Vp = static_cast<Eigen::Index>(rows * (T + 2));
    xp_.resize(static_cast<std::size_t>(cin_) * Vp);
    yp_.resize(static_cast<std::size_t>(cout_) * Vp);
    dxp_.resize(static_cast<std::size_t>(cin_) * Vp);
    dwk_.assign(27, detail::RowMat<S>::Zero(cout_, cin_));
    for (int i = 0; i < x.n; ++i) {
      detail::pad_time(x.channel(i, 0), cin_, rows, T, xp_.data());
      detail::pad_time(dy + i * dy_stride, cout_, rows, T, yp_.data());
      Eigen::Map<const detail::RowMat<S>> X(xp_.data(), cin_, Vp);
      Eigen::Map<const detail::RowMat<S>> dY(yp_.data(), cout_, Vp);
      Eigen::Map<detail::RowMat<S>> dX(dxp_.data(), cin_, Vp);
      if (dx) dX.setZero();
      detail::for_each_shift(D, L, T, [&](int k, Eigen::Index out, Eigen::Index in, Eigen::Index len) {
        dwk_[k].noalias() += dY.middleCols(out, len) * X.middleCols(in, len).transpose();
        if (dx) dX.middleCols(in, len).noalias() += wk_[k].transpose() * dY.middleCols(out, len);
      });
      Eigen::Map<const detail::RowMat<S>> dYi(dy + i * dy_stride, cout_, static_cast<Eigen::Index>(V));
      accumulate_bias(dYi);
      if (dx) detail::unpad_time(dxp_.data(), cin_, rows, T, dx + i * dx_stride);
    }
    for (int o = 0; o < cout_; ++o)
      for (int c = 0; c < cin_; ++c)
        for (int k = 0; k < 27; ++k) weight_.grad[(static_cast<std::size_t>(o) * cin_ + c) * 27 + k] += dwk_[k](o, c);
  }

 private:
  void split_weights() {
    wk_.assign(27, detail::RowMat<S>(cout_, cin_));
    for (int o = 0; o < cout_; ++o)
      for (int c = 0; c < cin_; ++c)
        for (int k = 0; k < 27; ++k) wk_[k](o, c) = weight_.value[(static_cast<std::size_t>(o) * cin_ + c) * 27 + k];
  }

  template <class Y>
  void add_bias(Y& y) const {
    if (bias_.size() == 0) return;
    for (int o = 0; o < cout_; ++o) y.row(o).array() += bias_.value[o];
  }

  template <class Y>
  void accumulate_bias(const Y& dy) {
    if (bias_.size() == 0) return;
    for (int o = 0; o < cout_; ++o) bias_.grad[o] += dy.row(o).sum();
  }

  int cin_ = 0;
  int cout_ = 0;
  int k_ = 3;
  Param<S> weight_;
  Param<S> bias_;
  std::vector<detail::RowMat<S>> wk_;
  std::vector<detail::RowMat<S>> dwk_;
  Buffer<S> xp_;
  Buffer<S> yp_;
  Buffer<S> dxp_;
};

// Batch normalisation followed by ReLU; statistics over samples and all grid positions.
template <class S>
class BatchNormReLU {
 public:
  BatchNormReLU() = default;
  BatchNormReLU(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps), gamma_(name + ".gamma", channels, S(1)),
        beta_(name + ".beta", channels, S(0)), running_mean_(channels, 0.0), running_var_(channels, 1.0) {}

  int channels() const { return c_; }
  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  std::vector<double>& running_mean() { return running_mean_; }
  std::vector<double>& running_var() { return running_var_; }

  // y is resized to (n, c, grid) and holds relu(gamma * xhat + beta).
  void forward(ChannelView<const S> x, Shape grid, bool train, Tensor<S>& y) {
    const std::size_t V = x.volume;
    y.resize({x.n, c_, grid.d, grid.l, grid.t});
    if (train) xhat_.resize(y.shape);
    inv_std_.assign(c_, S(0));
    const double count = static_cast<double>(x.n) * static_cast<double>(V);
    for (int ch = 0; ch < c_; ++ch) {
      double mean, var;
      if (train) {
        double s = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const S* p = x.channel(i, ch);
          for (std::size_t v = 0; v < V; ++v) s += p[v];
        }
        mean = s / count;
        double q = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const S* p = x.channel(i, ch);
          for (std::size_t v = 0; v < V; ++v) q += (p[v] - mean) * (p[v] - mean);
        }
        var = q / count;
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        running_mean_[ch] = (1.0 - momentum_) * running_mean_[ch] + momentum_ * mean;
        running_var_[ch] = (1.0 - momentum_) * running_var_[ch] + momentum_ * unbiased;
      } else {
        mean = running_mean_[ch];
        var = running_var_[ch];
      }
      const S inv = static_cast<S>(1.0 / std::sqrt(var + eps_));
      inv_std_[ch] = inv;
      const S m = static_cast<S>(mean), g = gamma_.value[ch], b = beta_.value[ch];
      for (int i = 0; i < x.n; ++i) {
        const S* p = x.channel(i, ch);
        S* out = y.channel(i, ch);
        S* xh = train ? xhat_.channel(i, ch) : nullptr;
        for (std::size_t v = 0; v < V; ++v) {
          const S h = (p[v] - m) * inv;
          if (xh) xh[v] = h;
          const S z = g * h + b;
          out[v] = std::max(z, S(0));  // NaN passes through and surfaces in the loss
        }
      }
    }
  }

  // dy: gradient w.r.t. the relu output; dx receives (adds) the input gradient.
  void backward(const Tensor<S>& dy, ChannelView<S> dx) {
    const std::size_t V = dy.shape.volume();
    const int n = dy.shape.n;
    const double count = static_cast<double>(n) * static_cast<double>(V);
    for (int ch = 0; ch < c_; ++ch) {
      const S g = gamma_.value[ch], b = beta_.value[ch];
      double sum_dz = 0.0, sum_dz_h = 0.0;
      for (int i = 0; i < n; ++i) {
        const S* d = dy.channel(i, ch);
        const S* h = xhat_.channel(i, ch);
        for (std::size_t v = 0; v < V; ++v) {
          if (g * h[v] + b > S(0)) {
            sum_dz += d[v];
            sum_dz_h += d[v] * h[v];
          }
        }
      }
      gamma_.grad[ch] += static_cast<S>(sum_dz_h);
      beta_.grad[ch] += static_cast<S>(sum_dz);
      const S scale = g * inv_std_[ch];
      const S mean_dz = static_cast<S>(sum_dz / count);
      const S mean_dz_h = static_cast<S>(sum_dz_h / count);
      for (int i = 0; i < n; ++i) {
        const S* d = dy.channel(i, ch);
        const S* h = xhat_.channel(i, ch);
        S* out = dx.channel(i, ch);
        for (std::size_t v = 0; v < V; ++v) {
          const S dz = g * h[v] + b > S(0) ? d[v] : S(0);
          out[v] += scale * (dz - mean_dz - h[v] * mean_dz_h);
        }
      }
    }
  }

 private:
  int c_ = 0;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Param<S> gamma_;
  Param<S> beta_;
  std::vector<double> running_mean_;
  std::vector<double> running_var_;
  Tensor<S> xhat_;
  Buffer<S> inv_std_;
};

// Non-overlapping average pooling (kernel == stride); trailing remainders are dropped.
struct PoolStride {
  int d = 1;
  int l = 1;
  int t = 1;
};

inline Shape pooled(Shape s, PoolStride p) { return {s.n, s.c, s.d / p.d, s.l / p.l, s.t / p.t}; }

template <class S>
void avg_pool_forward(const Tensor<S>& x, PoolStride p, Tensor<S>& y) {
  const Shape o = pooled(x.shape, p);
  if (o.d < 1 || o.l < 1 || o.t < 1) throw DomainError("pooling: input " + to_string(x.shape) + " too small");
  y.resize(o);
  const S w = S(1) / static_cast<S>(p.d * p.l * p.t);
  for (int i = 0; i < o.n; ++i)
    for (int c = 0; c < o.c; ++c)
      for (int d = 0; d < o.d; ++d)
        for (int l = 0; l < o.l; ++l)
          for (int t = 0; t < o.t; ++t) {
            S acc = 0;
            for (int a = 0; a < p.d; ++a)
              for (int b = 0; b < p.l; ++b)
                for (int e = 0; e < p.t; ++e) acc += x.at(i, c, d * p.d + a, l * p.l + b, t * p.t + e);
            y.at(i, c, d, l, t) = acc * w;
          }
}

template <class S>
void avg_pool_backward(const Tensor<S>& dy, PoolStride p, Shape in, Tensor<S>& dx) {
  dx.resize(in);
  const S w = S(1) / static_cast<S>(p.d * p.l * p.t);
  const Shape o = dy.shape;
  for (int i = 0; i < o.n; ++i)
    for (int c = 0; c < o.c; ++c)
      for (int d = 0; d < o.d; ++d)
        for (int l = 0; l < o.l; ++l)
          for (int t = 0; t < o.t; ++t) {
            const S g = dy.at(i, c, d, l, t) * w;
            for (int a = 0; a < p.d; ++a)
              for (int b = 0; b < p.l; ++b)
                for (int e = 0; e < p.t; ++e) dx.at(i, c, d * p.d + a, l * p.l + b, t * p.t + e) = g;
          }
}

// Global average pooling followed by a single-output linear layer.
template <class S>
class RegressionHead {
 public:
  RegressionHead() = default;
  RegressionHead(const std::string& name, int channels)
      : c_(channels), weight_(name + ".weight", channels), bias_(name + ".bias", 1) {}

  void init(std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / c_));
    for (auto& w : weight_.value) w = static_cast<S>(normal(rng));
    bias_.value[0] = S(0);
  }
  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  std::vector<S> forward(const Tensor<S>& x) {
    const std::size_t V = x.shape.volume();
    pooled_.assign(static_cast<std::size_t>(x.shape.n) * c_, S(0));
    std::vector<S> out(x.shape.n, bias_.value[0]);
    for (int i = 0; i < x.shape.n; ++i)
      for (int c = 0; c < c_; ++c) {
        const S* p = x.channel(i, c);
        double s = 0.0;
        for (std::size_t v = 0; v < V; ++v) s += p[v];
        const S g = static_cast<S>(s / static_cast<double>(V));
        pooled_[static_cast<std::size_t>(i) * c_ + c] = g;
        out[i] += weight_.value[c] * g;
      }
    return out;
  }

  void backward(const std::vector<S>& dout, Shape in, Tensor<S>& dx) {
    dx.resize(in);
    const std::size_t V = in.volume();
    for (int i = 0; i < in.n; ++i) {
      bias_.grad[0] += dout[i];
      for (int c = 0; c < c_; ++c) {
        weight_.grad[c] += dout[i] * pooled_[static_cast<std::size_t>(i) * c_ + c];
        const S g = dout[i] * weight_.value[c] / static_cast<S>(V);
        S* p = dx.channel(i, c);
        std::fill(p, p + V, g);
      }
    }
  }

 private:
  int c_ = 0;
  Param<S> weight_;
  Param<S> bias_;
  Buffer<S> pooled_;
};

}  // namespace oce::nn
