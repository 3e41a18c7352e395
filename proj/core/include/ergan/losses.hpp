#pragma once

#include <utility>
#include <vector>

#include "ergan/autodiff.hpp"
#include "ergan/image.hpp"

namespace ergan::losses {

using ergan::ad::Var;

struct LossWeights {
  double lambda_face = 10.0;
  double lambda_eye = 10.0;
  bool use_e_recon = false;
  double r1_gamma = 10.0;

  void validate() const {
    check(lambda_face >= 0 && lambda_eye >= 0 && r1_gamma >= 0, "loss weights must be >= 0");
  }
};

// Per-step scalar summary; serialized as one JSON line by the trainer.
struct LossReport {
  int64_t step = 0;
  double face_recon = 0, eye_recon = 0, f_recon = 0, e_recon = 0, cycle = 0;
  double adv_gen = 0, adv_disc = 0, r1 = 0;
  double total_gen = 0, total_disc = 0;
};

// Mean of |a-b| over all elements.
template <typename S>
Var<S> l1_mean(const Var<S>& a, const Var<S>& b) {
  return ad::mean_all(ad::abs(ad::sub(a, b)));
}

template <typename S>
Var<S> face_recon_loss(const Var<S>& x, const Var<S>& x_recon, const Var<S>& y,
                       const Var<S>& y_recon) {
  return ad::add(l1_mean(x_recon, x), l1_mean(y_recon, y));
}

// L1 restricted to the eye rectangle, summed over the two domains.
template <typename S>
Var<S> eye_recon_loss(const Var<S>& x, const Var<S>& x_recon, const Var<S>& y,
                      const Var<S>& y_recon, const img::PixelRect& r) {
  Var<S> lx = l1_mean(ad::crop_hw(x_recon, r.r0, r.c0, r.r1, r.c1),
                      ad::crop_hw(x, r.r0, r.c0, r.r1, r.c1));
  Var<S> ly = l1_mean(ad::crop_hw(y_recon, r.r0, r.c0, r.r1, r.c1),
                      ad::crop_hw(y, r.r0, r.c0, r.r1, r.c1));
  return ad::add(lx, ly);
}

// Latent reconstruction after the swap pass. The f term always enters the
// objective; the e term is reported but only weighed in when enabled.
template <typename S>
std::pair<Var<S>, Var<S>> code_recon_loss(const Var<S>& f_u, const Var<S>& f_x, const Var<S>& f_v,
                                          const Var<S>& f_y, const Var<S>& e_u, const Var<S>& e_x,
                                          const Var<S>& e_v, const Var<S>& e_y) {
  Var<S> f_term = ad::add(l1_mean(f_u, f_x), l1_mean(f_v, f_y));
  Var<S> e_term = ad::add(l1_mean(e_u, e_x), l1_mean(e_v, e_y));
  return {f_term, e_term};
}

template <typename S>
Var<S> cycle_loss(const Var<S>& x, const Var<S>& x_hat, const Var<S>& y, const Var<S>& y_hat) {
  return ad::add(l1_mean(x_hat, x), l1_mean(y_hat, y));
}

// Least-squares objective: real patches regress to 1, fake patches to 0.
// Mean within each score map, summed over scales.
template <typename S>
Var<S> lsgan_disc_loss(const std::vector<Var<S>>& real_maps, const std::vector<Var<S>>& fake_maps) {
  check(real_maps.size() == fake_maps.size() && !real_maps.empty(),
        "lsgan_disc_loss: scale count mismatch");
  Var<S> total;
  for (size_t i = 0; i < real_maps.size(); ++i) {
    Var<S> term = ad::add(ad::mean_all(ad::square(ad::add_scalar(real_maps[i], S(-1)))),
                          ad::mean_all(ad::square(fake_maps[i])));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

template <typename S>
Var<S> lsgan_gen_loss(const std::vector<Var<S>>& fake_maps) {
  check(!fake_maps.empty(), "lsgan_gen_loss: no score maps");
  Var<S> total;
  for (const auto& m : fake_maps) {
    Var<S> term = ad::mean_all(ad::square(ad::add_scalar(m, S(-1))));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

// (gamma/2) * mean over the batch of ||d(sum of real scores)/d(input)||^2.
// `scores_total` must be the summed score of a forward pass over `real_input`,
// a leaf that requires grad. The result is differentiable w.r.t. the
// discriminator parameters.
template <typename S>
Var<S> r1_penalty_from(const Var<S>& scores_total, const Var<S>& real_input, S gamma) {
  Var<S> g = ad::grad_wrt(scores_total, real_input, /*create_graph=*/true);
  int n = real_input.val().dim(0);
  return ad::scale(ad::sum_all(ad::square(g)), gamma / (S(2) * static_cast<S>(n)));
}

// Scalar-level weighted totals used for reporting and tests.
inline std::pair<double, double> total_losses(const LossReport& r, const LossWeights& w) {
  w.validate();
  double gen = w.lambda_face * r.face_recon + w.lambda_eye * r.eye_recon + r.f_recon +
               (w.use_e_recon ? r.e_recon : 0.0) + r.cycle + r.adv_gen;
  double disc = r.adv_disc + r.r1;
  return {gen, disc};
}

}  // namespace ergan::losses
