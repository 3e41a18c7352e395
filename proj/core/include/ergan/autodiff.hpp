#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ergan/tensor.hpp"

// Define-by-run reverse-mode autodiff on Tensor<S>. Every backward rule is
// itself written in terms of the public ops, so running a backward pass with
// graph recording enabled yields a differentiable gradient (needed for the
// gradient penalty on discriminator inputs).
namespace ergan::ad {

namespace detail {
inline thread_local bool g_grad_enabled = true;
}

struct GradMode {
  static bool enabled() { return detail::g_grad_enabled; }
};

// RAII switch for graph recording.
struct GradGuard {
  explicit GradGuard(bool on) : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = on; }
  ~GradGuard() { detail::g_grad_enabled = prev_; }
  GradGuard(const GradGuard&) = delete;
  GradGuard& operator=(const GradGuard&) = delete;

 private:
  bool prev_;
};

template <typename S>
class Var;

template <typename S>
struct Node {
  Tensor<S> value;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<Var<S>> parents;
  // Maps the gradient w.r.t. this node's output to gradients w.r.t. parents.
  std::function<std::vector<Var<S>>(const Var<S>&)> backward_fn;
  // Accumulated gradient; only populated for leaves by backward().
  Var<S>* grad = nullptr;

  ~Node() { delete grad; }
};

template <typename S>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<S> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor<S>& val() const { return n_->value; }
  Tensor<S>& mutable_val() { return n_->value; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  bool is_leaf() const { return n_ && n_->is_leaf; }
  S item() const {
    check(n_ && n_->value.numel() == 1, "item() requires a scalar");
    return n_->value[0];
  }

  Var grad() const {
    return (n_ && n_->grad) ? *n_->grad : Var();
  }
  void zero_grad() {
    if (n_) {
      delete n_->grad;
      n_->grad = nullptr;
    }
  }
  Var detach() const { return leaf(n_->value, false); }

  std::shared_ptr<Node<S>> node() const { return n_; }
  Node<S>* raw() const { return n_.get(); }

  explicit Var(std::shared_ptr<Node<S>> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<Node<S>> n_;
};

template <typename S>
Var<S> make_op(Tensor<S> out, std::vector<Var<S>> parents,
               std::function<std::vector<Var<S>>(const Var<S>&)> backward_fn) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(out);
  bool record = GradMode::enabled();
  if (record) {
    record = false;
    for (const auto& p : parents)
      if (p.requires_grad()) record = true;
  }
  if (record) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Var<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check(a.val().same_shape(b.val()), "add: shape mismatch");
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  const S* pb = b.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] + pb[i];
  return make_op<S>(std::move(out), {a, b},
                    [](const Var<S>& g) { return std::vector<Var<S>>{g, g}; });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check(a.val().same_shape(b.val()), "sub: shape mismatch");
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  const S* pb = b.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] - pb[i];
  return make_op<S>(std::move(out), {a, b}, [](const Var<S>& g) {
    return std::vector<Var<S>>{g, scale(g, S(-1))};
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check(a.val().same_shape(b.val()), "mul: shape mismatch");
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  const S* pb = b.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] * pb[i];
  return make_op<S>(std::move(out), {a, b}, [a, b](const Var<S>& g) {
    return std::vector<Var<S>>{mul(g, b), mul(g, a)};
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S c) {
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] * c;
  return make_op<S>(std::move(out), {a}, [c](const Var<S>& g) {
    return std::vector<Var<S>>{scale(g, c)};
  });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  return scale(a, S(-1));
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S c) {
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] + c;
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{g}; });
}

template <typename S>
Var<S> abs(const Var<S>& a) {
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] < S(0) ? -pa[i] : pa[i];
  return make_op<S>(std::move(out), {a}, [a](const Var<S>& g) {
    // sign(a) treated as a constant; exact a.e.
    Tensor<S> sgn(a.val().shape());
    const S* p = a.val().data();
    S* ps = sgn.data();
    for (int64_t i = 0, n = sgn.numel(); i < n; ++i)
      ps[i] = p[i] > S(0) ? S(1) : (p[i] < S(0) ? S(-1) : S(0));
    return std::vector<Var<S>>{mul(g, Var<S>::leaf(std::move(sgn)))};
  });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] * pa[i];
  return make_op<S>(std::move(out), {a}, [a](const Var<S>& g) {
    return std::vector<Var<S>>{scale(mul(g, a), S(2))};
  });
}

template <typename S>
Var<S> pow_scalar(const Var<S>& a, S p) {
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = std::pow(pa[i], p);
  return make_op<S>(std::move(out), {a}, [a, p](const Var<S>& g) {
    return std::vector<Var<S>>{scale(mul(g, pow_scalar(a, p - S(1))), p)};
  });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = std::tanh(pa[i]);
  return make_op<S>(std::move(out), {a}, [a](const Var<S>& g) {
    Var<S> y = tanh(a);  // recomputed; keeps the closure free of self-references
    Var<S> one = Var<S>::leaf(Tensor<S>::full(a.val().shape(), S(1)));
    return std::vector<Var<S>>{mul(g, sub(one, square(y)))};
  });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  Tensor<S> out(a.val().shape());
  const S* pa = a.val().data();
  S* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] >= S(0) ? pa[i] : slope * pa[i];
  return make_op<S>(std::move(out), {a}, [a, slope](const Var<S>& g) {
    Tensor<S> m(a.val().shape());
    const S* p = a.val().data();
    S* pm = m.data();
    for (int64_t i = 0, n = m.numel(); i < n; ++i) pm[i] = p[i] >= S(0) ? S(1) : slope;
    return std::vector<Var<S>>{mul(g, Var<S>::leaf(std::move(m)))};
  });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts
// ---------------------------------------------------------------------------

template <typename S>
Var<S> bcast_all(const Var<S>& s, std::vector<int> shape);

template <typename S>
Var<S> sum_all(const Var<S>& a) {
  S acc = 0;
  const S* pa = a.val().data();
  for (int64_t i = 0, n = a.val().numel(); i < n; ++i) acc += pa[i];
  Tensor<S> out({1});
  out[0] = acc;
  auto shape = a.val().shape();
  return make_op<S>(std::move(out), {a}, [shape](const Var<S>& g) {
    return std::vector<Var<S>>{bcast_all(g, shape)};
  });
}

template <typename S>
Var<S> bcast_all(const Var<S>& s, std::vector<int> shape) {
  check(s.val().numel() == 1, "bcast_all: source must be scalar");
  Tensor<S> out(shape, s.val()[0]);
  return make_op<S>(std::move(out), {s}, [](const Var<S>& g) {
    return std::vector<Var<S>>{sum_all(g)};
  });
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.val().numel()));
}

template <typename S>
Var<S> bcast_spatial(const Var<S>& t, int h, int w);

// (N,C,H,W) -> (N,C)
template <typename S>
Var<S> sum_spatial(const Var<S>& a) {
  check(a.val().ndim() == 4, "sum_spatial: expected NCHW");
  int n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  Tensor<S> out({n, c});
  const S* pa = a.val().data();
  for (int i = 0; i < n * c; ++i) {
    S acc = 0;
    const S* p = pa + static_cast<int64_t>(i) * h * w;
    for (int j = 0; j < h * w; ++j) acc += p[j];
    out[i] = acc;
  }
  return make_op<S>(std::move(out), {a}, [h, w](const Var<S>& g) {
    return std::vector<Var<S>>{bcast_spatial(g, h, w)};
  });
}

// (N,C) -> (N,C,H,W)
template <typename S>
Var<S> bcast_spatial(const Var<S>& t, int h, int w) {
  check(t.val().ndim() == 2, "bcast_spatial: expected (N,C)");
  int n = t.val().dim(0), c = t.val().dim(1);
  Tensor<S> out({n, c, h, w});
  const S* pt = t.val().data();
  S* po = out.data();
  for (int i = 0; i < n * c; ++i) {
    S v = pt[i];
    S* p = po + static_cast<int64_t>(i) * h * w;
    for (int j = 0; j < h * w; ++j) p[j] = v;
  }
  return make_op<S>(std::move(out), {t}, [](const Var<S>& g) {
    return std::vector<Var<S>>{sum_spatial(g)};
  });
}

template <typename S>
Var<S> mean_spatial(const Var<S>& a) {
  return scale(sum_spatial(a), S(1) / static_cast<S>(a.val().dim(2) * a.val().dim(3)));
}

template <typename S>
Var<S> bcast_channel(const Var<S>& t, int n, int h, int w);

// (N,C,H,W) -> (C)
template <typename S>
Var<S> sum_batch_spatial(const Var<S>& a) {
  check(a.val().ndim() == 4, "sum_batch_spatial: expected NCHW");
  int n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  Tensor<S> out({c});
  const S* pa = a.val().data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      S acc = 0;
      const S* p = pa + (static_cast<int64_t>(in) * c + ic) * h * w;
      for (int j = 0; j < h * w; ++j) acc += p[j];
      out[ic] += acc;
    }
  return make_op<S>(std::move(out), {a}, [n, h, w](const Var<S>& g) {
    return std::vector<Var<S>>{bcast_channel(g, n, h, w)};
  });
}

// (C) -> (N,C,H,W)
template <typename S>
Var<S> bcast_channel(const Var<S>& t, int n, int h, int w) {
  check(t.val().ndim() == 1, "bcast_channel: expected (C)");
  int c = t.val().dim(0);
  Tensor<S> out({n, c, h, w});
  const S* pt = t.val().data();
  S* po = out.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      S v = pt[ic];
      S* p = po + (static_cast<int64_t>(in) * c + ic) * h * w;
      for (int j = 0; j < h * w; ++j) p[j] = v;
    }
  return make_op<S>(std::move(out), {t}, [](const Var<S>& g) {
    return std::vector<Var<S>>{sum_batch_spatial(g)};
  });
}

template <typename S>
Var<S> bcast_rows(const Var<S>& t, int n);

// (N,D) -> (D)
template <typename S>
Var<S> sum_rows(const Var<S>& a) {
  check(a.val().ndim() == 2, "sum_rows: expected (N,D)");
  int n = a.val().dim(0), d = a.val().dim(1);
  Tensor<S> out({d});
  const S* pa = a.val().data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[j] += pa[static_cast<int64_t>(i) * d + j];
  return make_op<S>(std::move(out), {a}, [n](const Var<S>& g) {
    return std::vector<Var<S>>{bcast_rows(g, n)};
  });
}

// (D) -> (N,D)
template <typename S>
Var<S> bcast_rows(const Var<S>& t, int n) {
  check(t.val().ndim() == 1, "bcast_rows: expected (D)");
  int d = t.val().dim(0);
  Tensor<S> out({n, d});
  const S* pt = t.val().data();
  S* po = out.data();
  for (int i = 0; i < n; ++i) std::memcpy(po + static_cast<int64_t>(i) * d, pt, sizeof(S) * d);
  return make_op<S>(std::move(out), {t}, [](const Var<S>& g) {
    return std::vector<Var<S>>{sum_rows(g)};
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reshape(const Var<S>& a, std::vector<int> shape) {
  check(Tensor<S>::count(shape) == a.val().numel(), "reshape: element count mismatch");
  Tensor<S> out(shape);
  std::memcpy(out.data(), a.val().data(), sizeof(S) * a.val().numel());
  auto old = a.val().shape();
  return make_op<S>(std::move(out), {a}, [old](const Var<S>& g) {
    return std::vector<Var<S>>{reshape(g, old)};
  });
}

template <typename S>
Var<S> slice_channels(const Var<S>& a, int c0, int c1);

template <typename S>
Var<S> pad_channels(const Var<S>& a, int c0, int c_total) {
  check(a.val().ndim() == 4, "pad_channels: expected NCHW");
  int n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  check(c0 >= 0 && c0 + c <= c_total, "pad_channels: range out of bounds");
  Tensor<S> out({n, c_total, h, w});
  const S* pa = a.val().data();
  S* po = out.data();
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int in = 0; in < n; ++in)
    std::memcpy(po + (static_cast<int64_t>(in) * c_total + c0) * hw,
                pa + static_cast<int64_t>(in) * c * hw, sizeof(S) * c * hw);
  return make_op<S>(std::move(out), {a}, [c0, c](const Var<S>& g) {
    return std::vector<Var<S>>{slice_channels(g, c0, c0 + c)};
  });
}

template <typename S>
Var<S> slice_channels(const Var<S>& a, int c0, int c1) {
  check(a.val().ndim() == 4, "slice_channels: expected NCHW");
  int n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  check(0 <= c0 && c0 < c1 && c1 <= c, "slice_channels: range out of bounds");
  Tensor<S> out({n, c1 - c0, h, w});
  const S* pa = a.val().data();
  S* po = out.data();
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int in = 0; in < n; ++in)
    std::memcpy(po + static_cast<int64_t>(in) * (c1 - c0) * hw,
                pa + (static_cast<int64_t>(in) * c + c0) * hw, sizeof(S) * (c1 - c0) * hw);
  return make_op<S>(std::move(out), {a}, [c0, c](const Var<S>& g) {
    return std::vector<Var<S>>{pad_channels(g, c0, c)};
  });
}

template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  check(a.val().ndim() == 4 && b.val().ndim() == 4, "concat_channels: expected NCHW");
  int n = a.val().dim(0), ca = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  int cb = b.val().dim(1);
  check(b.val().dim(0) == n && b.val().dim(2) == h && b.val().dim(3) == w,
        "concat_channels: N/H/W mismatch");
  Tensor<S> out({n, ca + cb, h, w});
  const S* pa = a.val().data();
  const S* pb = b.val().data();
  S* po = out.data();
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int in = 0; in < n; ++in) {
    std::memcpy(po + static_cast<int64_t>(in) * (ca + cb) * hw,
                pa + static_cast<int64_t>(in) * ca * hw, sizeof(S) * ca * hw);
    std::memcpy(po + (static_cast<int64_t>(in) * (ca + cb) + ca) * hw,
                pb + static_cast<int64_t>(in) * cb * hw, sizeof(S) * cb * hw);
  }
  return make_op<S>(std::move(out), {a, b}, [ca, cb](const Var<S>& g) {
    return std::vector<Var<S>>{slice_channels(g, 0, ca), slice_channels(g, ca, ca + cb)};
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, int c0, int c1);

template <typename S>
Var<S> pad_cols(const Var<S>& a, int c0, int d_total) {
  check(a.val().ndim() == 2, "pad_cols: expected (N,D)");
  int n = a.val().dim(0), d = a.val().dim(1);
  check(c0 >= 0 && c0 + d <= d_total, "pad_cols: range out of bounds");
  Tensor<S> out({n, d_total});
  const S* pa = a.val().data();
  S* po = out.data();
  for (int i = 0; i < n; ++i)
    std::memcpy(po + static_cast<int64_t>(i) * d_total + c0, pa + static_cast<int64_t>(i) * d,
                sizeof(S) * d);
  return make_op<S>(std::move(out), {a}, [c0, d](const Var<S>& g) {
    return std::vector<Var<S>>{slice_cols(g, c0, c0 + d)};
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, int c0, int c1) {
  check(a.val().ndim() == 2, "slice_cols: expected (N,D)");
  int n = a.val().dim(0), d = a.val().dim(1);
  check(0 <= c0 && c0 < c1 && c1 <= d, "slice_cols: range out of bounds");
  Tensor<S> out({n, c1 - c0});
  const S* pa = a.val().data();
  S* po = out.data();
  for (int i = 0; i < n; ++i)
    std::memcpy(po + static_cast<int64_t>(i) * (c1 - c0), pa + static_cast<int64_t>(i) * d + c0,
                sizeof(S) * (c1 - c0));
  return make_op<S>(std::move(out), {a}, [c0, d](const Var<S>& g) {
    return std::vector<Var<S>>{pad_cols(g, c0, d)};
  });
}

// Crop rows [r0,r1) and cols [c0,c1) of every image in the batch.
template <typename S>
Var<S> pad_hw(const Var<S>& a, int r0, int c0, int h_total, int w_total);

template <typename S>
Var<S> crop_hw(const Var<S>& a, int r0, int c0, int r1, int c1) {
  check(a.val().ndim() == 4, "crop_hw: expected NCHW");
  int n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  check(0 <= r0 && r0 < r1 && r1 <= h && 0 <= c0 && c0 < c1 && c1 <= w,
        "crop_hw: rectangle out of bounds");
  int oh = r1 - r0, ow = c1 - c0;
  Tensor<S> out({n, c, oh, ow});
  const S* pa = a.val().data();
  S* po = out.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const S* src = pa + ((static_cast<int64_t>(in) * c + ic) * h + r0) * w + c0;
      S* dst = po + (static_cast<int64_t>(in) * c + ic) * oh * ow;
      for (int r = 0; r < oh; ++r) std::memcpy(dst + r * ow, src + static_cast<int64_t>(r) * w, sizeof(S) * ow);
    }
  return make_op<S>(std::move(out), {a}, [r0, c0, h, w](const Var<S>& g) {
    return std::vector<Var<S>>{pad_hw(g, r0, c0, h, w)};
  });
}

template <typename S>
Var<S> pad_hw(const Var<S>& a, int r0, int c0, int h_total, int w_total) {
  check(a.val().ndim() == 4, "pad_hw: expected NCHW");
  int n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  check(r0 >= 0 && c0 >= 0 && r0 + h <= h_total && c0 + w <= w_total, "pad_hw: out of bounds");
  Tensor<S> out({n, c, h_total, w_total});
  const S* pa = a.val().data();
  S* po = out.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const S* src = pa + (static_cast<int64_t>(in) * c + ic) * h * w;
      S* dst = po + ((static_cast<int64_t>(in) * c + ic) * h_total + r0) * w_total + c0;
      for (int r = 0; r < h; ++r) std::memcpy(dst + static_cast<int64_t>(r) * w_total, src + static_cast<int64_t>(r) * w, sizeof(S) * w);
    }
  int r1 = r0 + h, c1 = c0 + w;
  return make_op<S>(std::move(out), {a}, [r0, c0, r1, c1](const Var<S>& g) {
    return std::vector<Var<S>>{crop_hw(g, r0, c0, r1, c1)};
  });
}

// Zero out rows [r0,r1) x cols [c0,c1); identity elsewhere. The fill is an
// explicit +0 so outputs are bit-identical no matter what was masked.
template <typename S>
Var<S> mask_box(const Var<S>& a, int r0, int c0, int r1, int c1) {
  check(a.val().ndim() == 4, "mask_box: expected NCHW");
  int n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  check(0 <= r0 && r0 < r1 && r1 <= h && 0 <= c0 && c0 < c1 && c1 <= w,
        "mask_box: rectangle out of bounds");
  Tensor<S> out = a.val();
  S* po = out.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int r = r0; r < r1; ++r) {
        S* row = po + ((static_cast<int64_t>(in) * c + ic) * h + r) * w;
        for (int cc = c0; cc < c1; ++cc) row[cc] = S(0);
      }
  return make_op<S>(std::move(out), {a}, [r0, c0, r1, c1](const Var<S>& g) {
    return std::vector<Var<S>>{mask_box(g, r0, c0, r1, c1)};
  });
}

// ---------------------------------------------------------------------------
// Matrix multiply (N,K)x(K,M); ta/tb transpose the respective operand.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b, bool ta = false, bool tb = false) {
  check(a.val().ndim() == 2 && b.val().ndim() == 2, "matmul: expected rank-2 operands");
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<const Mat>;
  Map ma(a.val().data(), a.val().dim(0), a.val().dim(1));
  Map mb(b.val().data(), b.val().dim(0), b.val().dim(1));
  int rows = ta ? a.val().dim(1) : a.val().dim(0);
  int inner = ta ? a.val().dim(0) : a.val().dim(1);
  int inner2 = tb ? b.val().dim(1) : b.val().dim(0);
  int cols = tb ? b.val().dim(0) : b.val().dim(1);
  check(inner == inner2, "matmul: inner dimension mismatch");
  Tensor<S> out({rows, cols});
  Eigen::Map<Mat> mo(out.data(), rows, cols);
  if (!ta && !tb)
    mo.noalias() = ma * mb;
  else if (!ta && tb)
    mo.noalias() = ma * mb.transpose();
  else if (ta && !tb)
    mo.noalias() = ma.transpose() * mb;
  else
    mo.noalias() = ma.transpose() * mb.transpose();
  return make_op<S>(std::move(out), {a, b}, [a, b, ta, tb](const Var<S>& g) {
    Var<S> ga, gb;
    if (!ta && !tb) {
      ga = matmul(g, b, false, true);
      gb = matmul(a, g, true, false);
    } else if (!ta && tb) {
      ga = matmul(g, b, false, false);
      gb = matmul(g, a, true, false);
    } else if (ta && !tb) {
      ga = matmul(b, g, false, true);
      gb = matmul(a, g, false, false);
    } else {
      ga = matmul(b, g, true, true);
      gb = matmul(g, a, true, true);
    }
    return std::vector<Var<S>>{ga, gb};
  });
}

// ---------------------------------------------------------------------------
// Convolution family. x:(N,Cin,H,W) w:(Cout,Cin,kh,kw). The three kernels
// (forward, input-grad, weight-grad) are each other's adjoints, which closes
// the set under differentiation.
// ---------------------------------------------------------------------------

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Column buffer layout: (Cin*kh*kw) x (Ho*Wo), row-major.
template <typename S>
void im2col(const S* x, int c, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo,
            S* cols) {
  for (int ic = 0; ic < c; ++ic)
    for (int ik = 0; ik < kh; ++ik)
      for (int jk = 0; jk < kw; ++jk) {
        S* dst = cols + ((static_cast<int64_t>(ic) * kh + ik) * kw + jk) * (static_cast<int64_t>(ho) * wo);
        const S* src = x + static_cast<int64_t>(ic) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ik;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = S(0);
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad + jk;
            dst[oy * wo + ox] = (ix >= 0 && ix < w) ? src[static_cast<int64_t>(iy) * w + ix] : S(0);
          }
        }
      }
}

// Scatter-add of a column buffer back into an image.
template <typename S>
void col2im_add(const S* cols, int c, int h, int w, int kh, int kw, int stride, int pad, int ho,
                int wo, S* x) {
  for (int ic = 0; ic < c; ++ic)
    for (int ik = 0; ik < kh; ++ik)
      for (int jk = 0; jk < kw; ++jk) {
        const S* src = cols + ((static_cast<int64_t>(ic) * kh + ik) * kw + jk) * (static_cast<int64_t>(ho) * wo);
        S* dst = x + static_cast<int64_t>(ic) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ik;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad + jk;
            if (ix >= 0 && ix < w) dst[static_cast<int64_t>(iy) * w + ix] += src[oy * wo + ox];
          }
        }
      }
}

template <typename S>
std::vector<S>& conv_scratch() {
  static thread_local std::vector<S> buf;
  return buf;
}

}  // namespace detail

template <typename S>
Var<S> conv2d_input_grad(const Var<S>& gout, const Var<S>& w, int stride, int pad, int h, int ww);
template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& gout, int stride, int pad, int kh, int kw);

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, int stride, int pad) {
  check(x.val().ndim() == 4 && w.val().ndim() == 4, "conv2d: expected NCHW input and OIHW weight");
  int n = x.val().dim(0), cin = x.val().dim(1), h = x.val().dim(2), wd = x.val().dim(3);
  int cout = w.val().dim(0), kh = w.val().dim(2), kw = w.val().dim(3);
  check(w.val().dim(1) == cin, "conv2d: channel mismatch");
  int ho = detail::conv_out_dim(h, kh, stride, pad);
  int wo = detail::conv_out_dim(wd, kw, stride, pad);
  check(ho > 0 && wo > 0, "conv2d: output would be empty");
  Tensor<S> out({n, cout, ho, wo});
  int64_t ckk = static_cast<int64_t>(cin) * kh * kw;
  int64_t hw = static_cast<int64_t>(ho) * wo;
  auto& cols = detail::conv_scratch<S>();
  cols.resize(static_cast<size_t>(ckk * hw));
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> wm(w.val().data(), cout, ckk);
  for (int i = 0; i < n; ++i) {
    detail::im2col(x.val().data() + static_cast<int64_t>(i) * cin * h * wd, cin, h, wd, kh, kw,
                   stride, pad, ho, wo, cols.data());
    Eigen::Map<const Mat> cm(cols.data(), ckk, hw);
    Eigen::Map<Mat> om(out.data() + static_cast<int64_t>(i) * cout * hw, cout, hw);
    om.noalias() = wm * cm;
  }
  return make_op<S>(std::move(out), {x, w}, [x, w, stride, pad, h, wd, kh, kw](const Var<S>& g) {
    return std::vector<Var<S>>{conv2d_input_grad(g, w, stride, pad, h, wd),
                               conv2d_weight_grad(x, g, stride, pad, kh, kw)};
  });
}

template <typename S>
Var<S> conv2d_input_grad(const Var<S>& gout, const Var<S>& w, int stride, int pad, int h, int ww) {
  check(gout.val().ndim() == 4 && w.val().ndim() == 4, "conv2d_input_grad: bad ranks");
  int n = gout.val().dim(0), cout = gout.val().dim(1), ho = gout.val().dim(2), wo = gout.val().dim(3);
  int cin = w.val().dim(1), kh = w.val().dim(2), kw = w.val().dim(3);
  check(w.val().dim(0) == cout, "conv2d_input_grad: channel mismatch");
  Tensor<S> out({n, cin, h, ww});
  int64_t ckk = static_cast<int64_t>(cin) * kh * kw;
  int64_t hw = static_cast<int64_t>(ho) * wo;
  auto& cols = detail::conv_scratch<S>();
  cols.resize(static_cast<size_t>(ckk * hw));
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> wm(w.val().data(), cout, ckk);
  for (int i = 0; i < n; ++i) {
    Eigen::Map<const Mat> gm(gout.val().data() + static_cast<int64_t>(i) * cout * hw, cout, hw);
    Eigen::Map<Mat> cm(cols.data(), ckk, hw);
    cm.noalias() = wm.transpose() * gm;
    detail::col2im_add(cols.data(), cin, h, ww, kh, kw, stride, pad, ho, wo,
                       out.data() + static_cast<int64_t>(i) * cin * h * ww);
  }
  return make_op<S>(std::move(out), {gout, w}, [gout, w, stride, pad, kh, kw](const Var<S>& s) {
    return std::vector<Var<S>>{conv2d(s, w, stride, pad),
                               conv2d_weight_grad(s, gout, stride, pad, kh, kw)};
  });
}

template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& gout, int stride, int pad, int kh,
                          int kw) {
  check(x.val().ndim() == 4 && gout.val().ndim() == 4, "conv2d_weight_grad: bad ranks");
  int n = x.val().dim(0), cin = x.val().dim(1), h = x.val().dim(2), wd = x.val().dim(3);
  int cout = gout.val().dim(1), ho = gout.val().dim(2), wo = gout.val().dim(3);
  check(gout.val().dim(0) == n, "conv2d_weight_grad: batch mismatch");
  Tensor<S> out({cout, cin, kh, kw});
  int64_t ckk = static_cast<int64_t>(cin) * kh * kw;
  int64_t hw = static_cast<int64_t>(ho) * wo;
  auto& cols = detail::conv_scratch<S>();
  cols.resize(static_cast<size_t>(ckk * hw));
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<Mat> om(out.data(), cout, ckk);
  om.setZero();
  for (int i = 0; i < n; ++i) {
    detail::im2col(x.val().data() + static_cast<int64_t>(i) * cin * h * wd, cin, h, wd, kh, kw,
                   stride, pad, ho, wo, cols.data());
    Eigen::Map<const Mat> cm(cols.data(), ckk, hw);
    Eigen::Map<const Mat> gm(gout.val().data() + static_cast<int64_t>(i) * cout * hw, cout, hw);
    om.noalias() += gm * cm.transpose();
  }
  int hh = h, wwd = wd;
  return make_op<S>(std::move(out), {x, gout}, [x, gout, stride, pad, hh, wwd](const Var<S>& t) {
    return std::vector<Var<S>>{conv2d_input_grad(gout, t, stride, pad, hh, wwd),
                               conv2d(x, t, stride, pad)};
  });
}

// ---------------------------------------------------------------------------
// Pooling / upsampling (factor 2)
// ---------------------------------------------------------------------------

template <typename S>
Var<S> upsample_nearest2(const Var<S>& a);

template <typename S>
Var<S> avg_pool2(const Var<S>& a) {
  check(a.val().ndim() == 4, "avg_pool2: expected NCHW");
  int n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  check(h % 2 == 0 && w % 2 == 0, "avg_pool2: odd spatial size");
  int oh = h / 2, ow = w / 2;
  Tensor<S> out({n, c, oh, ow});
  const S* pa = a.val().data();
  S* po = out.data();
  for (int64_t i = 0; i < static_cast<int64_t>(n) * c; ++i) {
    const S* src = pa + i * h * w;
    S* dst = po + i * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const S* p = src + (2 * y) * w + 2 * x;
        dst[y * ow + x] = (p[0] + p[1] + p[w] + p[w + 1]) * S(0.25);
      }
  }
  return make_op<S>(std::move(out), {a}, [](const Var<S>& g) {
    return std::vector<Var<S>>{scale(upsample_nearest2(g), S(0.25))};
  });
}

template <typename S>
Var<S> upsample_nearest2(const Var<S>& a) {
  check(a.val().ndim() == 4, "upsample_nearest2: expected NCHW");
  int n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  Tensor<S> out({n, c, h * 2, w * 2});
  const S* pa = a.val().data();
  S* po = out.data();
  for (int64_t i = 0; i < static_cast<int64_t>(n) * c; ++i) {
    const S* src = pa + i * h * w;
    S* dst = po + i * 4 * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        S v = src[y * w + x];
        S* p = dst + (2 * y) * (2 * w) + 2 * x;
        p[0] = v;
        p[1] = v;
        p[2 * w] = v;
        p[2 * w + 1] = v;
      }
  }
  return make_op<S>(std::move(out), {a}, [](const Var<S>& g) {
    return std::vector<Var<S>>{scale(avg_pool2(g), S(4))};
  });
}

// ---------------------------------------------------------------------------
// Backward engine
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
std::vector<Node<S>*> topo_from(Node<S>* root) {
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<S>* p = node->parents[idx].raw();
      ++idx;
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // post-order: parents before consumers
}

template <typename S>
void run_backward(const Var<S>& root, bool create_graph, Node<S>* only_target, Var<S>* out) {
  check(root.defined() && root.requires_grad(), "backward: root does not require grad");
  auto order = topo_from<S>(root.raw());
  std::unordered_map<Node<S>*, Var<S>> grads;
  grads[root.raw()] = Var<S>::leaf(Tensor<S>::full(root.val().shape(), S(1)));
  GradGuard guard(create_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    auto gi = grads.find(n);
    if (gi == grads.end()) continue;
    Var<S> g = gi->second;
    grads.erase(gi);
    if (n->is_leaf) {
      if (only_target) {
        if (n == only_target) *out = g;
      } else {
        if (n->grad && n->grad->defined())
          *n->grad = add(*n->grad, g);
        else
          n->grad = new Var<S>(g);
      }
      continue;
    }
    auto pgrads = n->backward_fn(g);
    check(pgrads.size() == n->parents.size(), "backward: arity mismatch");
    for (size_t i = 0; i < pgrads.size(); ++i) {
      Node<S>* p = n->parents[i].raw();
      if (!p || !p->requires_grad || !pgrads[i].defined()) continue;
      auto gj = grads.find(p);
      if (gj == grads.end())
        grads.emplace(p, pgrads[i]);
      else
        gj->second = add(gj->second, pgrads[i]);
    }
  }
}

}  // namespace detail

// Accumulates gradients into every reachable leaf's .grad.
template <typename S>
void backward(const Var<S>& root) {
  detail::run_backward<S>(root, /*create_graph=*/false, nullptr, nullptr);
}

// Gradient of `root` w.r.t. the single leaf `x`, without touching any .grad.
// With create_graph the result is itself differentiable.
template <typename S>
Var<S> grad_wrt(const Var<S>& root, const Var<S>& x, bool create_graph) {
  check(x.is_leaf(), "grad_wrt: target must be a leaf");
  Var<S> out;
  detail::run_backward<S>(root, create_graph, x.raw(), &out);
  if (!out.defined()) out = Var<S>::leaf(Tensor<S>::zeros(x.val().shape()));
  return out;
}

}  // namespace ergan::ad
