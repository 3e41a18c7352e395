#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ergan/layers.hpp"

namespace ergan::nn {

// Adam with coupled (L2-into-gradient) weight decay.
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(ParamList<S> params, double lr, double beta1, double beta2, double weight_decay)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), wd_(weight_decay) {
    for (auto& p : params_) {
      m_.push_back(Tensor<S>::zeros(p.v.val().shape()));
      v_.push_back(Tensor<S>::zeros(p.v.val().shape()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.v.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].v;
      ad::Var<S> gv = p.grad();
      Tensor<S>& theta = p.mutable_val();
      const S* g = gv.defined() ? gv.val().data() : nullptr;
      S* m = m_[i].data();
      S* v = v_[i].data();
      S* w = theta.data();
      for (int64_t j = 0, n = theta.numel(); j < n; ++j) {
        double gj = (g ? static_cast<double>(g[j]) : 0.0) + wd_ * static_cast<double>(w[j]);
        double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * gj;
        double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * gj * gj;
        m[j] = static_cast<S>(mj);
        v[j] = static_cast<S>(vj);
        w[j] = static_cast<S>(static_cast<double>(w[j]) -
                              lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + kEps));
      }
    }
  }

  const ParamList<S>& params() const { return params_; }
  int64_t t() const { return t_; }

  // Checkpoint access: first-moment and second-moment buffers in param order.
  std::vector<Tensor<S>>& m() { return m_; }
  std::vector<Tensor<S>>& v() { return v_; }
  const std::vector<Tensor<S>>& m() const { return m_; }
  const std::vector<Tensor<S>>& v() const { return v_; }
  void set_t(int64_t t) { t_ = t; }

 private:
  static constexpr double kEps = 1e-8;
  ParamList<S> params_;
  std::vector<Tensor<S>> m_, v_;
  double lr_ = 1e-4, beta1_ = 0.0, beta2_ = 0.999, wd_ = 0.0;
  int64_t t_ = 0;
};

}  // namespace ergan::nn
