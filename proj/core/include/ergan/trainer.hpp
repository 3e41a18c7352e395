#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ergan/corpus.hpp"
#include "ergan/losses.hpp"
#include "ergan/nets.hpp"
#include "ergan/optim.hpp"

namespace ergan::trainer {

using ergan::ad::Var;
using ergan::img::Domain;
using ergan::losses::LossReport;
using ergan::losses::LossWeights;

enum class Mode {
  full,
  half_removal_only,
  no_face_recon,
  no_eye_recon,
  no_f_recon,
  no_cc,
  with_e_recon,
};

std::string mode_name(Mode m);
Mode parse_mode(const std::string& name);

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double weight_decay = 5e-4;
  int batch = 4;
  int64_t steps = 1;
  uint64_t seed = 0;
  Mode mode = Mode::full;
  bool strict_composite_output = true;
  int64_t checkpoint_every = 500;

  void validate() const {
    check(lr > 0, "lr must be > 0");
    check(steps >= 1, "steps must be >= 1");
    check(0 <= beta1 && beta1 < beta2 && beta2 < 1, "need 0 <= beta1 < beta2 < 1");
    check(batch >= 1, "batch must be >= 1");
    check(weight_decay >= 0, "weight_decay must be >= 0");
  }
};

// Which objective terms participate in a step. `wearing` gates the whole
// glasses-wearing branch (swap output v, its codes, cycle, domain-A
// adversarial play).
struct TermFlags {
  bool face = true;
  bool eye = true;
  bool f_rec = true;
  bool e_rec = false;
  bool cc = true;
  bool adv = true;
  bool wearing = true;

  static TermFlags for_mode(Mode m, bool use_e_recon);
};

template <typename S>
struct TrainState {
  int64_t step = 0;
  nets::GeneratorBundle<S> gen;
  nets::DiscriminatorSet<S> disc;
  nn::Adam<S> opt_g, opt_d;
  int64_t batch_counter = 0;
  TrainConfig cfg;
  LossWeights weights;
  img::EyeBox box;

  bool initialized() const { return !gen.E_f.down.empty(); }
};

template <typename S>
TrainState<S> init_state(nets::NetConfig net, const TrainConfig& cfg, const LossWeights& weights) {
  cfg.validate();
  weights.validate();
  TrainState<S> st;
  auto [gen, disc] = nets::init_bundle<S>(net, cfg.seed);
  st.gen = std::move(gen);
  st.disc = std::move(disc);
  nn::ParamList<S> gp, dp;
  st.gen.collect(gp);
  st.disc.collect(dp);
  st.opt_g = nn::Adam<S>(std::move(gp), cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay);
  st.opt_d = nn::Adam<S>(std::move(dp), cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay);
  st.cfg = cfg;
  st.weights = weights;
  return st;
}

// Forward pass of the generator side, shared between training and the
// gradient tests. Undefined Vars mark skipped branches.
template <typename S>
struct GenPass {
  Var<S> x, y;
  Var<S> u, v;  // removal / wearing swap outputs
  Var<S> face, eye, f_rec, e_rec, cc;
  Var<S> total_without_adv;  // weighted per flags; undefined if nothing enabled
};

template <typename S>
GenPass<S> generator_pass(const nets::GeneratorBundle<S>& gen, const Tensor<S>& a,
                          const Tensor<S>& b, const img::EyeBox& box, const LossWeights& w,
                          const TermFlags& flags, bool compute_disabled_terms = false) {
  using ergan::nets::decode;
  using ergan::nets::encode_appearance;
  using ergan::nets::encode_eye;
  GenPass<S> p;
  p.x = Var<S>::leaf(a);
  p.y = Var<S>::leaf(b);
  img::PixelRect rect =
      img::eye_region_pixels(box, gen.config.resolution, gen.config.resolution);

  Var<S> f_x = encode_appearance(gen, p.x, box);
  Var<S> f_y = encode_appearance(gen, p.y, box);
  Var<S> e_x = encode_eye(gen, p.x, Domain::A_with_glasses);
  Var<S> e_y = encode_eye(gen, p.y, Domain::B_without_glasses);

  bool want_recon = flags.face || flags.eye || compute_disabled_terms;
  if (want_recon) {
    Var<S> x_rec = decode(gen, f_x, e_x, Domain::A_with_glasses, p.x);
    Var<S> y_rec = decode(gen, f_y, e_y, Domain::B_without_glasses, p.y);
    p.face = losses::face_recon_loss(p.x, x_rec, p.y, y_rec);
    p.eye = losses::eye_recon_loss(p.x, x_rec, p.y, y_rec, rect);
  }

  // Swap: removal output u lives in domain B, wearing output v in domain A.
  p.u = decode(gen, f_x, e_y, Domain::B_without_glasses, p.x);
  if (flags.wearing) p.v = decode(gen, f_y, e_x, Domain::A_with_glasses, p.y);

  bool want_codes = flags.f_rec || flags.e_rec || flags.cc || compute_disabled_terms;
  Var<S> f_u, e_u, f_v, e_v;
  if (want_codes) {
    f_u = encode_appearance(gen, p.u, box);
    e_u = encode_eye(gen, p.u, Domain::B_without_glasses);
    if (flags.wearing) {
      f_v = encode_appearance(gen, p.v, box);
      e_v = encode_eye(gen, p.v, Domain::A_with_glasses);
    }
    if (flags.wearing) {
      auto [f_term, e_term] = losses::code_recon_loss(f_u, f_x, f_v, f_y, e_u, e_y, e_v, e_x);
      p.f_rec = f_term;
      p.e_rec = e_term;
    } else {
      p.f_rec = losses::l1_mean(f_u, f_x);
      p.e_rec = losses::l1_mean(e_u, e_y);
    }
    if (flags.wearing && (flags.cc || compute_disabled_terms)) {
      Var<S> x_hat = decode(gen, f_u, e_v, Domain::A_with_glasses, p.u);
      Var<S> y_hat = decode(gen, f_v, e_u, Domain::B_without_glasses, p.v);
      p.cc = losses::cycle_loss(p.x, x_hat, p.y, y_hat);
    }
  }

  auto contribute = [&](Var<S>& total, const Var<S>& term, double weight, bool enabled) {
    if (!term.defined()) return;
    if (!enabled && !compute_disabled_terms) return;
    Var<S> wterm = ad::scale(term, static_cast<S>(enabled ? weight : 0.0));
    total = total.defined() ? ad::add(total, wterm) : wterm;
  };
  contribute(p.total_without_adv, p.face, w.lambda_face, flags.face);
  contribute(p.total_without_adv, p.eye, w.lambda_eye, flags.eye);
  contribute(p.total_without_adv, p.f_rec, 1.0, flags.f_rec);
  contribute(p.total_without_adv, p.e_rec, 1.0, flags.e_rec);
  contribute(p.total_without_adv, p.cc, 1.0, flags.cc);
  return p;
}

// Full generator objective (including adversarial terms against fixed
// discriminators) as one differentiable scalar.
template <typename S>
Var<S> generator_objective(const nets::GeneratorBundle<S>& gen,
                           const nets::DiscriminatorSet<S>& disc, const Tensor<S>& a,
                           const Tensor<S>& b, const img::EyeBox& box, const LossWeights& w,
                           const TermFlags& flags) {
  GenPass<S> p = generator_pass(gen, a, b, box, w, flags);
  Var<S> total = p.total_without_adv;
  if (flags.adv) {
    Var<S> adv = losses::lsgan_gen_loss(nets::discriminate(disc, p.u, Domain::B_without_glasses));
    if (flags.wearing)
      adv = ad::add(adv,
                    losses::lsgan_gen_loss(nets::discriminate(disc, p.v, Domain::A_with_glasses)));
    total = total.defined() ? ad::add(total, adv) : adv;
  }
  check(total.defined(), "generator objective has no enabled terms");
  return total;
}

// One full optimization step: generator forward (self-reconstruction, swap,
// code reconstruction, cycle), discriminator update on detached swaps with
// the gradient penalty, then a generator update against the refreshed
// discriminators.
template <typename S>
LossReport dual_step(TrainState<S>& st, const Tensor<S>& a, const Tensor<S>& b,
                     const TermFlags* flags_override = nullptr,
                     bool compute_disabled_terms = false) {
  check(st.initialized(), "dual_step: state not initialized");
  check(a.ndim() == 4 && b.ndim() == 4 && a.dim(0) >= 1 && a.dim(0) == b.dim(0),
        "dual_step: batches must be non-empty and equally sized");
  TermFlags flags = flags_override ? *flags_override
                                   : TermFlags::for_mode(st.cfg.mode, st.weights.use_e_recon);
  LossReport r;
  r.step = st.step + 1;

  GenPass<S> p = generator_pass(st.gen, a, b, st.box, st.weights, flags, compute_disabled_terms);
  auto item = [](const Var<S>& v) { return v.defined() ? static_cast<double>(v.item()) : 0.0; };

  // --- discriminator update (LSGAN + R1 on real batches) ---
  Var<S> total_disc;
  if (flags.adv) {
    Var<S> y_real = Var<S>::leaf(b, /*requires_grad=*/true);
    auto real_maps_b = nets::discriminate(st.disc, y_real, Domain::B_without_glasses);
    auto fake_maps_b = nets::discriminate(st.disc, p.u.detach(), Domain::B_without_glasses);
    Var<S> adv_disc = losses::lsgan_disc_loss(real_maps_b, fake_maps_b);
    Var<S> scores_b;
    for (const auto& m : real_maps_b) {
      Var<S> s = ad::sum_all(m);
      scores_b = scores_b.defined() ? ad::add(scores_b, s) : s;
    }
    Var<S> r1 = losses::r1_penalty_from(scores_b, y_real, static_cast<S>(st.weights.r1_gamma));
    if (flags.wearing) {
      Var<S> x_real = Var<S>::leaf(a, /*requires_grad=*/true);
      auto real_maps_a = nets::discriminate(st.disc, x_real, Domain::A_with_glasses);
      auto fake_maps_a = nets::discriminate(st.disc, p.v.detach(), Domain::A_with_glasses);
      adv_disc = ad::add(adv_disc, losses::lsgan_disc_loss(real_maps_a, fake_maps_a));
      Var<S> scores_a;
      for (const auto& m : real_maps_a) {
        Var<S> s = ad::sum_all(m);
        scores_a = scores_a.defined() ? ad::add(scores_a, s) : s;
      }
      r1 = ad::add(r1, losses::r1_penalty_from(scores_a, x_real, static_cast<S>(st.weights.r1_gamma)));
    }
    total_disc = ad::add(adv_disc, r1);
    r.adv_disc = item(adv_disc);
    r.r1 = item(r1);
  }
  st.opt_d.zero_grad();
  if (total_disc.defined()) ad::backward(total_disc);
  st.opt_d.step();

  // --- generator update against the updated discriminators ---
  Var<S> total_gen = p.total_without_adv;
  if (flags.adv) {
    Var<S> adv =
        losses::lsgan_gen_loss(nets::discriminate(st.disc, p.u, Domain::B_without_glasses));
    if (flags.wearing)
      adv = ad::add(
          adv, losses::lsgan_gen_loss(nets::discriminate(st.disc, p.v, Domain::A_with_glasses)));
    r.adv_gen = item(adv);
    total_gen = total_gen.defined() ? ad::add(total_gen, adv) : adv;
  }
  st.opt_g.zero_grad();
  if (total_gen.defined()) ad::backward(total_gen);
  st.opt_g.step();

  r.face_recon = item(p.face);
  r.eye_recon = item(p.eye);
  r.f_recon = item(p.f_rec);
  r.e_recon = item(p.e_rec);
  r.cycle = item(p.cc);
  r.total_gen = item(total_gen);
  r.total_disc = item(total_disc);
  ++st.step;
  return r;
}

// --- inference ---

template <typename S>
Tensor<S> eye_code_of(const TrainState<S>& st, const img::FaceImage<S>& image, Domain domain) {
  check(st.initialized(), "eye_code_of: state not initialized");
  ad::GradGuard off(false);
  Tensor<S> batch = nets::to_nchw<S>({image});
  Var<S> e = nets::encode_eye(st.gen, Var<S>::leaf(std::move(batch)), domain);
  Tensor<S> code({st.gen.config.eye_code_dim});
  for (int i = 0; i < code.dim(0); ++i) code[i] = e.val()[i];
  return code;
}

// Decode `input`'s appearance with an explicit eye code into `target`;
// strict composite mode pastes only the generated eye patch back into the
// input, so everything outside the box is preserved bit-exact.
template <typename S>
img::FaceImage<S> apply_eye_code(const TrainState<S>& st, const img::FaceImage<S>& input,
                                 const Tensor<S>& code, Domain target) {
  check(st.initialized(), "apply_eye_code: state not initialized");
  check(code.ndim() == 1 && code.dim(0) == st.gen.config.eye_code_dim,
        "apply_eye_code: bad eye code length");
  ad::GradGuard off(false);
  Var<S> x = Var<S>::leaf(nets::to_nchw<S>({input}));
  Var<S> f = nets::encode_appearance(st.gen, x, st.box);
  Tensor<S> code_row({1, code.dim(0)});
  for (int i = 0; i < code.dim(0); ++i) code_row[i] = code[i];
  Var<S> e = Var<S>::leaf(std::move(code_row));
  Var<S> out = nets::decode(st.gen, f, e, target, x);
  img::FaceImage<S> decoded = nets::from_nchw<S>(out.val(), 0, target);
  decoded.source_id = input.source_id;
  if (!st.cfg.strict_composite_output) return decoded;
  Tensor<S> patch = img::crop_eye_region(decoded, st.box);
  img::FaceImage<S> composed = img::composite_eye_region(input, patch, st.box);
  composed.domain = target;
  return composed;
}

template <typename S>
img::FaceImage<S> remove_glasses(const TrainState<S>& st, const img::FaceImage<S>& img_a,
                                 const img::FaceImage<S>& exemplar_b) {
  check(img_a.domain != Domain::B_without_glasses, "remove_glasses: input tagged as domain B");
  check(exemplar_b.domain != Domain::A_with_glasses,
        "remove_glasses: exemplar tagged as domain A");
  Tensor<S> code = eye_code_of(st, exemplar_b, Domain::B_without_glasses);
  return apply_eye_code(st, img_a, code, Domain::B_without_glasses);
}

template <typename S>
img::FaceImage<S> wear_glasses(const TrainState<S>& st, const img::FaceImage<S>& img_b,
                               const img::FaceImage<S>& exemplar_a) {
  check(img_b.domain != Domain::A_with_glasses, "wear_glasses: input tagged as domain A");
  check(exemplar_a.domain != Domain::B_without_glasses,
        "wear_glasses: exemplar tagged as domain B");
  Tensor<S> code = eye_code_of(st, exemplar_a, Domain::A_with_glasses);
  return apply_eye_code(st, img_b, code, Domain::A_with_glasses);
}

// Decodes with e(alpha) = (1-alpha) e_start + alpha e_end for n evenly spaced
// alphas; the end frames use the given codes verbatim.
template <typename S>
std::vector<img::FaceImage<S>> interpolate_eyes(const TrainState<S>& st,
                                                const img::FaceImage<S>& input,
                                                const Tensor<S>& e_start, const Tensor<S>& e_end,
                                                int n, Domain target) {
  check(n >= 2, "interpolation needs at least 2 frames");
  check(e_start.same_shape(e_end), "interpolation endpoints disagree on code length");
  std::vector<img::FaceImage<S>> frames;
  frames.reserve(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    Tensor<S> code = e_start;
    if (k == n - 1) {
      code = e_end;
    } else if (k > 0) {
      S alpha = static_cast<S>(k) / static_cast<S>(n - 1);
      for (int64_t i = 0; i < code.numel(); ++i)
        code[i] = (S(1) - alpha) * e_start[i] + alpha * e_end[i];
    }
    frames.push_back(apply_eye_code(st, input, code, target));
  }
  return frames;
}

// --- float-precision training drivers and checkpoints ---

struct RunArtifacts {
  std::string out_dir;  // empty: keep everything in memory only
};

// Runs `cfg.steps - state.step` steps over the manifest's training stream,
// appending one JSON line per step to logs/losses.jsonl when out_dir is set
// and checkpointing every cfg.checkpoint_every steps plus at the end.
std::vector<LossReport> run_training(TrainState<float>& state,
                                     const corpus::CorpusManifest& manifest,
                                     const RunArtifacts& artifacts);

TrainState<float> train(const nets::NetConfig& net, const TrainConfig& cfg,
                        const LossWeights& weights, const corpus::CorpusManifest& manifest,
                        const RunArtifacts& artifacts, std::vector<LossReport>* log_out = nullptr);

void save_checkpoint(const TrainState<float>& st, const std::string& path);
TrainState<float> load_checkpoint(const std::string& path);

std::string loss_report_json(const LossReport& r);

}  // namespace ergan::trainer
