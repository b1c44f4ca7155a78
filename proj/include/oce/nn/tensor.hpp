#pragma once

// Dense 5-D activations laid out (sample, channel, depth, lateral, time), time fastest.

#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "oce/error.hpp"

namespace oce::nn {

// Storage aligned to the widest vector unit, so vectorised kernels split every
// array identically and results do not depend on where the allocator put it.
template <class S>
using Buffer = std::vector<S, Eigen::aligned_allocator<S>>;

struct Shape {
  int n = 0;
  int c = 0;
  int d = 0;
  int l = 0;
  int t = 0;

  std::size_t volume() const { return static_cast<std::size_t>(d) * l * t; }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * volume(); }
  std::size_t size() const { return static_cast<std::size_t>(n) * per_sample(); }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.d) + "x" +
         std::to_string(s.l) + "x" + std::to_string(s.t);
}

template <class S>
struct Tensor {
  Shape shape;
  Buffer<S> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(s.size(), S(0)) {}

  void resize(Shape s) {
    shape = s;
    data.assign(s.size(), S(0));
  }
  S* sample(int n) { return data.data() + static_cast<std::size_t>(n) * shape.per_sample(); }
  const S* sample(int n) const { return data.data() + static_cast<std::size_t>(n) * shape.per_sample(); }
  S* channel(int n, int c) { return sample(n) + static_cast<std::size_t>(c) * shape.volume(); }
  const S* channel(int n, int c) const { return sample(n) + static_cast<std::size_t>(c) * shape.volume(); }
  S& at(int n, int c, int d, int l, int t) {
    return channel(n, c)[(static_cast<std::size_t>(d) * shape.l + l) * shape.t + t];
  }
  S at(int n, int c, int d, int l, int t) const {
    return channel(n, c)[(static_cast<std::size_t>(d) * shape.l + l) * shape.t + t];
  }
};

// A view of the first `c` channels of every sample of a wider tensor.
template <class S>
struct ChannelView {
  S* base;
  int n;
  int c;
  std::size_t volume;
  std::size_t sample_stride;

  S* channel(int i, int ch) const { return base + i * sample_stride + static_cast<std::size_t>(ch) * volume; }

  operator ChannelView<const S>() const
    requires(!std::is_const_v<S>)
  {
    return {base, n, c, volume, sample_stride};
  }
};

template <class S>
ChannelView<S> view(Tensor<S>& x, int channels, int first = 0) {
  return {x.data.data() + static_cast<std::size_t>(first) * x.shape.volume(), x.shape.n, channels, x.shape.volume(),
          x.shape.per_sample()};
}

template <class S>
ChannelView<const S> view(const Tensor<S>& x, int channels, int first = 0) {
  return {x.data.data() + static_cast<std::size_t>(first) * x.shape.volume(), x.shape.n, channels, x.shape.volume(),
          x.shape.per_sample()};
}

template <class S>
struct Param {
  std::string name;
  Buffer<S> value;
  Buffer<S> grad;

  Param() = default;
  Param(std::string n, std::size_t size, S init = S(0)) : name(std::move(n)), value(size, init), grad(size, S(0)) {}
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

}  // namespace oce::nn
