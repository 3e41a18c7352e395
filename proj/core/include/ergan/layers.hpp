#pragma once

#include <random>
#include <string>
#include <vector>

#include "ergan/autodiff.hpp"

namespace ergan::nn {

using ergan::ad::Var;

template <typename S>
struct NamedParam {
  std::string name;
  Var<S> v;
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

using Rng = std::mt19937_64;

template <typename S>
Var<S> he_normal_param(Rng& rng, std::vector<int> shape, int64_t fan_in) {
  Tensor<S> t(shape);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(dist(rng));
  return Var<S>::leaf(std::move(t), true);
}

template <typename S>
Var<S> const_param(std::vector<int> shape, S v) {
  return Var<S>::leaf(Tensor<S>::full(std::move(shape), v), true);
}

template <typename S>
struct Conv2d {
  Var<S> w, b;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(Rng& rng, int cin, int cout, int k, int stride_, int pad_)
      : w(he_normal_param<S>(rng, {cout, cin, k, k}, static_cast<int64_t>(cin) * k * k)),
        b(const_param<S>({cout}, S(0))),
        stride(stride_),
        pad(pad_) {}

  Var<S> forward(const Var<S>& x) const {
    Var<S> y = ad::conv2d(x, w, stride, pad);
    return ad::add(y, ad::bcast_channel(b, y.val().dim(0), y.val().dim(2), y.val().dim(3)));
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

template <typename S>
struct InstanceNorm {
  Var<S> gamma, beta;
  S eps = S(1e-5);

  InstanceNorm() = default;
  explicit InstanceNorm(int c) : gamma(const_param<S>({c}, S(1))), beta(const_param<S>({c}, S(0))) {}

  Var<S> forward(const Var<S>& x) const {
    int n = x.val().dim(0), h = x.val().dim(2), w = x.val().dim(3);
    Var<S> mu = ad::mean_spatial(x);
    Var<S> xc = ad::sub(x, ad::bcast_spatial(mu, h, w));
    Var<S> var = ad::mean_spatial(ad::square(xc));
    Var<S> inv = ad::pow_scalar(ad::add_scalar(var, eps), S(-0.5));
    Var<S> y = ad::mul(xc, ad::bcast_spatial(inv, h, w));
    y = ad::mul(y, ad::bcast_channel(gamma, n, h, w));
    return ad::add(y, ad::bcast_channel(beta, n, h, w));
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

// Normalization whose per-channel affine comes from a conditioning input
// (shape (N,C) for both scale and shift).
template <typename S>
Var<S> adain(const Var<S>& x, const Var<S>& scale_nc, const Var<S>& shift_nc, S eps = S(1e-5)) {
  int h = x.val().dim(2), w = x.val().dim(3);
  Var<S> mu = ad::mean_spatial(x);
  Var<S> xc = ad::sub(x, ad::bcast_spatial(mu, h, w));
  Var<S> var = ad::mean_spatial(ad::square(xc));
  Var<S> inv = ad::pow_scalar(ad::add_scalar(var, eps), S(-0.5));
  Var<S> y = ad::mul(xc, ad::bcast_spatial(inv, h, w));
  y = ad::mul(y, ad::bcast_spatial(scale_nc, h, w));
  return ad::add(y, ad::bcast_spatial(shift_nc, h, w));
}

template <typename S>
struct Linear {
  Var<S> w, b;

  Linear() = default;
  Linear(Rng& rng, int in, int out)
      : w(he_normal_param<S>(rng, {in, out}, in)), b(const_param<S>({out}, S(0))) {}

  Var<S> forward(const Var<S>& x) const {
    Var<S> y = ad::matmul(x, w);
    return ad::add(y, ad::bcast_rows(b, y.val().dim(0)));
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

// conv + IN + lrelu, conv + IN, with identity skip.
template <typename S>
struct ResBlock {
  Conv2d<S> c1, c2;
  InstanceNorm<S> n1, n2;

  ResBlock() = default;
  ResBlock(Rng& rng, int c) : c1(rng, c, c, 3, 1, 1), c2(rng, c, c, 3, 1, 1), n1(c), n2(c) {}

  Var<S> forward(const Var<S>& x, S slope) const {
    Var<S> y = ad::leaky_relu(n1.forward(c1.forward(x)), slope);
    y = n2.forward(c2.forward(y));
    return ad::add(x, y);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    c1.collect(prefix + ".c1", out);
    n1.collect(prefix + ".n1", out);
    c2.collect(prefix + ".c2", out);
    n2.collect(prefix + ".n2", out);
  }
};

// Residual block with two conditioning normalizations.
template <typename S>
struct AdainResBlock {
  Conv2d<S> c1, c2;

  AdainResBlock() = default;
  AdainResBlock(Rng& rng, int c) : c1(rng, c, c, 3, 1, 1), c2(rng, c, c, 3, 1, 1) {}

  Var<S> forward(const Var<S>& x, const Var<S>& s1, const Var<S>& t1, const Var<S>& s2,
                 const Var<S>& t2, S slope) const {
    Var<S> y = ad::leaky_relu(adain(c1.forward(x), s1, t1), slope);
    y = adain(c2.forward(y), s2, t2);
    return ad::add(x, y);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    c1.collect(prefix + ".c1", out);
    c2.collect(prefix + ".c2", out);
  }
};

}  // namespace ergan::nn
