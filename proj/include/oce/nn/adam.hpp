#pragma once

#include <cmath>
#include <vector>

#include "oce/nn/tensor.hpp"

namespace oce::nn {

struct AdamOptions {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are kept in double for reproducible updates.
template <class S>
class Adam {
 public:
  Adam(std::vector<Param<S>*> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
        const double update = opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
        p.value[i] = static_cast<S>(p.value[i] - update);
      }
    }
  }

  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const AdamOptions& options() const { return opt_; }

 private:
  std::vector<Param<S>*> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long long t_ = 0;
};

}  // namespace oce::nn
