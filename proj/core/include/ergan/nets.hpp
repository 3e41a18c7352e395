#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ergan/image.hpp"
#include "ergan/layers.hpp"

namespace ergan::nets {

using ergan::ad::Var;
using ergan::img::Domain;
using ergan::img::EyeBox;
using ergan::nn::ParamList;

struct NetConfig {
  int resolution = 224;
  int appearance_channels = 256;
  int appearance_downsamples = 2;
  int eye_code_dim = 8;
  int n_residual_blocks = 4;
  int disc_scales = 0;  // 0 = auto (3 at >=224, else 2)
  int base_width = 64;
  double leaky_slope = 0.2;

  void finalize() {
    if (disc_scales == 0) disc_scales = resolution >= 224 ? 3 : 2;
    check(resolution >= 16 && resolution % 2 == 0, "resolution must be even and >= 16");
    check(appearance_downsamples >= 1, "need at least one downsample");
    check(resolution % (1 << appearance_downsamples) == 0,
          "resolution not divisible by 2^appearance_downsamples");
    check(resolution % (1 << (disc_scales - 1)) == 0,
          "resolution not divisible by 2^(disc_scales-1)");
    check(eye_code_dim >= 1, "eye_code_dim must be >= 1");
    check(n_residual_blocks >= 1, "n_residual_blocks must be >= 1");
    check(base_width >= 1 && appearance_channels >= base_width, "bad widths");
    check(appearance_channels % (1 << appearance_downsamples) == 0,
          "appearance_channels not divisible by 2^appearance_downsamples");
  }

  int code_spatial() const { return resolution >> appearance_downsamples; }

  bool operator==(const NetConfig&) const = default;
};

// Appearance encoder; the eye region of its input is masked before encoding,
// so the code depends only on pixels outside the box.
template <typename S>
struct AppearanceEncoder {
  nn::Conv2d<S> stem;
  nn::InstanceNorm<S> stem_norm;
  std::vector<nn::Conv2d<S>> down;
  std::vector<nn::InstanceNorm<S>> down_norm;
  std::vector<nn::ResBlock<S>> blocks;
  NetConfig cfg;

  AppearanceEncoder() = default;
  AppearanceEncoder(nn::Rng& rng, const NetConfig& c) : cfg(c) {
    stem = nn::Conv2d<S>(rng, 3, c.base_width, 7, 1, 3);
    stem_norm = nn::InstanceNorm<S>(c.base_width);
    int w = c.base_width;
    for (int i = 0; i < c.appearance_downsamples; ++i) {
      int wo = (i == c.appearance_downsamples - 1) ? c.appearance_channels : w * 2;
      down.emplace_back(rng, w, wo, 4, 2, 1);
      down_norm.emplace_back(wo);
      w = wo;
    }
    for (int i = 0; i < c.n_residual_blocks; ++i) blocks.emplace_back(rng, w);
  }

  Var<S> forward(const Var<S>& x) const {
    S slope = static_cast<S>(cfg.leaky_slope);
    Var<S> y = ad::leaky_relu(stem_norm.forward(stem.forward(x)), slope);
    for (size_t i = 0; i < down.size(); ++i)
      y = ad::leaky_relu(down_norm[i].forward(down[i].forward(y)), slope);
    for (const auto& b : blocks) y = b.forward(y, slope);
    return y;
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    stem.collect(prefix + ".stem", out);
    stem_norm.collect(prefix + ".stem_norm", out);
    for (size_t i = 0; i < down.size(); ++i) {
      down[i].collect(prefix + ".down" + std::to_string(i), out);
      down_norm[i].collect(prefix + ".down_norm" + std::to_string(i), out);
    }
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + ".res" + std::to_string(i), out);
  }
};

// Eye-area attribute encoder: strided conv stack, global average pooling, and
// a projection to a low-dimensional code.
template <typename S>
struct EyeEncoder {
  nn::Conv2d<S> stem;
  nn::InstanceNorm<S> stem_norm;
  std::vector<nn::Conv2d<S>> down;
  std::vector<nn::InstanceNorm<S>> down_norm;
  nn::Linear<S> proj;
  NetConfig cfg;

  static constexpr int kDownStages = 4;

  EyeEncoder() = default;
  EyeEncoder(nn::Rng& rng, const NetConfig& c) : cfg(c) {
    stem = nn::Conv2d<S>(rng, 3, c.base_width, 7, 1, 3);
    stem_norm = nn::InstanceNorm<S>(c.base_width);
    int w = c.base_width;
    for (int i = 0; i < kDownStages; ++i) {
      int wo = std::min(w * 2, c.base_width * 4);
      down.emplace_back(rng, w, wo, 4, 2, 1);
      down_norm.emplace_back(wo);
      w = wo;
    }
    proj = nn::Linear<S>(rng, w, c.eye_code_dim);
  }

  Var<S> forward(const Var<S>& x) const {
    S slope = static_cast<S>(cfg.leaky_slope);
    Var<S> y = ad::leaky_relu(stem_norm.forward(stem.forward(x)), slope);
    for (size_t i = 0; i < down.size(); ++i)
      y = ad::leaky_relu(down_norm[i].forward(down[i].forward(y)), slope);
    Var<S> pooled = ad::mean_spatial(y);  // (N,C)
    return proj.forward(pooled);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    stem.collect(prefix + ".stem", out);
    stem_norm.collect(prefix + ".stem_norm", out);
    for (size_t i = 0; i < down.size(); ++i) {
      down[i].collect(prefix + ".down" + std::to_string(i), out);
      down_norm[i].collect(prefix + ".down_norm" + std::to_string(i), out);
    }
    proj.collect(prefix + ".proj", out);
  }
};

// Decoder: the eye code is mapped by an MLP to per-channel scale/shift pairs
// conditioning the residual blocks; the appearance grid flows through those
// blocks, is upsampled back to image size, and a refine stage concatenates the
// raw output with the source image.
template <typename S>
struct Decoder {
  nn::Linear<S> mlp1, mlp2, mlp3;
  std::vector<nn::AdainResBlock<S>> blocks;
  std::vector<nn::Conv2d<S>> up;
  std::vector<nn::InstanceNorm<S>> up_norm;
  nn::Conv2d<S> out_conv;
  nn::Conv2d<S> refine1, refine2;
  nn::InstanceNorm<S> refine_norm;
  NetConfig cfg;

  static constexpr int kMlpHidden = 128;

  Decoder() = default;
  Decoder(nn::Rng& rng, const NetConfig& c) : cfg(c) {
    int C = c.appearance_channels;
    mlp1 = nn::Linear<S>(rng, c.eye_code_dim, kMlpHidden);
    mlp2 = nn::Linear<S>(rng, kMlpHidden, kMlpHidden);
    mlp3 = nn::Linear<S>(rng, kMlpHidden, c.n_residual_blocks * 4 * C);
    for (int i = 0; i < c.n_residual_blocks; ++i) blocks.emplace_back(rng, C);
    int w = C;
    for (int i = 0; i < c.appearance_downsamples; ++i) {
      int wo = w / 2;
      up.emplace_back(rng, w, wo, 3, 1, 1);
      up_norm.emplace_back(wo);
      w = wo;
    }
    out_conv = nn::Conv2d<S>(rng, w, 3, 7, 1, 3);
    refine1 = nn::Conv2d<S>(rng, 6, c.base_width, 3, 1, 1);
    refine_norm = nn::InstanceNorm<S>(c.base_width);
    refine2 = nn::Conv2d<S>(rng, c.base_width, 3, 3, 1, 1);
  }

  Var<S> forward(const Var<S>& f, const Var<S>& e, const Var<S>& source) const {
    S slope = static_cast<S>(cfg.leaky_slope);
    int C = cfg.appearance_channels;
    Var<S> h = ad::leaky_relu(mlp1.forward(e), slope);
    h = ad::leaky_relu(mlp2.forward(h), slope);
    Var<S> style = mlp3.forward(h);  // (N, n_blocks*4*C)
    Var<S> y = f;
    for (size_t i = 0; i < blocks.size(); ++i) {
      int o = static_cast<int>(i) * 4 * C;
      Var<S> s1 = ad::add_scalar(ad::slice_cols(style, o, o + C), S(1));
      Var<S> t1 = ad::slice_cols(style, o + C, o + 2 * C);
      Var<S> s2 = ad::add_scalar(ad::slice_cols(style, o + 2 * C, o + 3 * C), S(1));
      Var<S> t2 = ad::slice_cols(style, o + 3 * C, o + 4 * C);
      y = blocks[i].forward(y, s1, t1, s2, t2, slope);
    }
    for (size_t i = 0; i < up.size(); ++i) {
      y = ad::upsample_nearest2(y);
      y = ad::leaky_relu(up_norm[i].forward(up[i].forward(y)), slope);
    }
    Var<S> raw = ad::tanh(out_conv.forward(y));
    Var<S> cat = ad::concat_channels(raw, source);
    Var<S> r = ad::leaky_relu(refine_norm.forward(refine1.forward(cat)), slope);
    return ad::tanh(refine2.forward(r));
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    mlp1.collect(prefix + ".mlp1", out);
    mlp2.collect(prefix + ".mlp2", out);
    mlp3.collect(prefix + ".mlp3", out);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + ".res" + std::to_string(i), out);
    for (size_t i = 0; i < up.size(); ++i) {
      up[i].collect(prefix + ".up" + std::to_string(i), out);
      up_norm[i].collect(prefix + ".up_norm" + std::to_string(i), out);
    }
    out_conv.collect(prefix + ".out_conv", out);
    refine1.collect(prefix + ".refine1", out);
    refine_norm.collect(prefix + ".refine_norm", out);
    refine2.collect(prefix + ".refine2", out);
  }
};

// Patch discriminator at one scale: three strided convs and a score head.
// Scores are unbounded (least-squares objective).
template <typename S>
struct PatchDisc {
  nn::Conv2d<S> c1, c2, c3, head;
  nn::InstanceNorm<S> n2, n3;
  NetConfig cfg;

  PatchDisc() = default;
  PatchDisc(nn::Rng& rng, const NetConfig& c) : cfg(c) {
    int b = c.base_width;
    c1 = nn::Conv2d<S>(rng, 3, b, 4, 2, 1);
    c2 = nn::Conv2d<S>(rng, b, 2 * b, 4, 2, 1);
    n2 = nn::InstanceNorm<S>(2 * b);
    c3 = nn::Conv2d<S>(rng, 2 * b, 4 * b, 4, 2, 1);
    n3 = nn::InstanceNorm<S>(4 * b);
    head = nn::Conv2d<S>(rng, 4 * b, 1, 3, 1, 1);
  }

  Var<S> forward(const Var<S>& x) const {
    S slope = static_cast<S>(cfg.leaky_slope);
    Var<S> y = ad::leaky_relu(c1.forward(x), slope);
    y = ad::leaky_relu(n2.forward(c2.forward(y)), slope);
    y = ad::leaky_relu(n3.forward(c3.forward(y)), slope);
    return head.forward(y);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    c1.collect(prefix + ".c1", out);
    c2.collect(prefix + ".c2", out);
    n2.collect(prefix + ".n2", out);
    c3.collect(prefix + ".c3", out);
    n3.collect(prefix + ".n3", out);
    head.collect(prefix + ".head", out);
  }
};

template <typename S>
struct MultiScaleDisc {
  std::vector<PatchDisc<S>> scales;

  MultiScaleDisc() = default;
  MultiScaleDisc(nn::Rng& rng, const NetConfig& c) {
    for (int i = 0; i < c.disc_scales; ++i) scales.emplace_back(rng, c);
  }

  // One score map per scale; scale s sees the input average-pooled s times.
  std::vector<Var<S>> forward(const Var<S>& x) const {
    std::vector<Var<S>> maps;
    Var<S> cur = x;
    for (size_t i = 0; i < scales.size(); ++i) {
      if (i > 0) cur = ad::avg_pool2(cur);
      maps.push_back(scales[i].forward(cur));
    }
    return maps;
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    for (size_t i = 0; i < scales.size(); ++i)
      scales[i].collect(prefix + ".scale" + std::to_string(i), out);
  }
};

// All generator-side networks. E_f is a single parameter set used for both
// domains; the eye encoders and decoders are per-domain.
template <typename S>
struct GeneratorBundle {
  AppearanceEncoder<S> E_f;
  EyeEncoder<S> E_e_A, E_e_B;
  Decoder<S> G_A, G_B;
  NetConfig config;

  void collect(ParamList<S>& out) const {
    E_f.collect("gen.E_f", out);
    E_e_A.collect("gen.E_e_A", out);
    E_e_B.collect("gen.E_e_B", out);
    G_A.collect("gen.G_A", out);
    G_B.collect("gen.G_B", out);
  }

  int64_t param_count() const {
    ParamList<S> p;
    collect(p);
    int64_t n = 0;
    for (auto& q : p) n += q.v.val().numel();
    return n;
  }
};

template <typename S>
struct DiscriminatorSet {
  MultiScaleDisc<S> D_A, D_B;
  NetConfig config;

  void collect(ParamList<S>& out) const {
    D_A.collect("disc.D_A", out);
    D_B.collect("disc.D_B", out);
  }

  int64_t param_count() const {
    ParamList<S> p;
    collect(p);
    int64_t n = 0;
    for (auto& q : p) n += q.v.val().numel();
    return n;
  }
};

template <typename S>
std::pair<GeneratorBundle<S>, DiscriminatorSet<S>> init_bundle(NetConfig cfg, uint64_t seed) {
  cfg.finalize();
  nn::Rng rng(seed);
  GeneratorBundle<S> gen;
  gen.config = cfg;
  gen.E_f = AppearanceEncoder<S>(rng, cfg);
  gen.E_e_A = EyeEncoder<S>(rng, cfg);
  gen.E_e_B = EyeEncoder<S>(rng, cfg);
  gen.G_A = Decoder<S>(rng, cfg);
  gen.G_B = Decoder<S>(rng, cfg);
  DiscriminatorSet<S> disc;
  disc.config = cfg;
  disc.D_A = MultiScaleDisc<S>(rng, cfg);
  disc.D_B = MultiScaleDisc<S>(rng, cfg);
  return {std::move(gen), std::move(disc)};
}

// --- batch-level operations (NCHW Vars) ---

template <typename S>
void check_resolution(const NetConfig& cfg, const Var<S>& x, const char* what) {
  check(x.val().ndim() == 4 && x.val().dim(1) == 3 && x.val().dim(2) == cfg.resolution &&
            x.val().dim(3) == cfg.resolution,
        std::string(what) + ": batch does not match configured resolution");
}

// Masks the eye region, then encodes. Depends only on pixels outside the box.
template <typename S>
Var<S> encode_appearance(const GeneratorBundle<S>& gen, const Var<S>& x, const EyeBox& box) {
  check_resolution(gen.config, x, "encode_appearance");
  img::PixelRect r = img::eye_region_pixels(box, gen.config.resolution, gen.config.resolution);
  Var<S> masked = ad::mask_box(x, r.r0, r.c0, r.r1, r.c1);
  return gen.E_f.forward(masked);
}

template <typename S>
Var<S> encode_eye(const GeneratorBundle<S>& gen, const Var<S>& x, Domain domain) {
  check_resolution(gen.config, x, "encode_eye");
  check(domain != Domain::unknown, "encode_eye: domain must be A or B");
  return domain == Domain::A_with_glasses ? gen.E_e_A.forward(x) : gen.E_e_B.forward(x);
}

// Decodes into the given domain; `source` feeds the refine stage.
template <typename S>
Var<S> decode(const GeneratorBundle<S>& gen, const Var<S>& f, const Var<S>& e, Domain domain,
              const Var<S>& source) {
  check(domain != Domain::unknown, "decode: domain must be A or B");
  check(f.val().ndim() == 4 && f.val().dim(1) == gen.config.appearance_channels &&
            f.val().dim(2) == gen.config.code_spatial(),
        "decode: appearance code does not match config");
  check(e.val().ndim() == 2 && e.val().dim(1) == gen.config.eye_code_dim,
        "decode: eye code does not match config");
  check_resolution(gen.config, source, "decode(source)");
  return domain == Domain::A_with_glasses ? gen.G_A.forward(f, e, source)
                                          : gen.G_B.forward(f, e, source);
}

template <typename S>
std::vector<Var<S>> discriminate(const DiscriminatorSet<S>& disc, const Var<S>& x, Domain domain) {
  check_resolution(disc.config, x, "discriminate");
  check(domain != Domain::unknown, "discriminate: domain must be A or B");
  return domain == Domain::A_with_glasses ? disc.D_A.forward(x) : disc.D_B.forward(x);
}

// --- FaceImage <-> batch conversion ---

template <typename S>
Tensor<S> to_nchw(const std::vector<img::FaceImage<S>>& images) {
  check(!images.empty(), "to_nchw: empty batch");
  int h = images[0].height(), w = images[0].width();
  Tensor<S> out({static_cast<int>(images.size()), 3, h, w});
  for (size_t i = 0; i < images.size(); ++i) {
    check(images[i].height() == h && images[i].width() == w, "to_nchw: mixed resolutions");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out[((static_cast<int64_t>(i) * 3 + c) * h + y) * w + x] =
              images[i].pixels[(static_cast<int64_t>(y) * w + x) * 3 + c];
  }
  return out;
}

template <typename S>
img::FaceImage<S> from_nchw(const Tensor<S>& batch, int index, Domain domain = Domain::unknown) {
  check(batch.ndim() == 4 && batch.dim(1) == 3, "from_nchw: expected (N,3,H,W)");
  check(index >= 0 && index < batch.dim(0), "from_nchw: index out of range");
  int h = batch.dim(2), w = batch.dim(3);
  img::FaceImage<S> out;
  out.pixels = Tensor<S>({h, w, 3});
  out.domain = domain;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.pixels[(static_cast<int64_t>(y) * w + x) * 3 + c] =
            batch[((static_cast<int64_t>(index) * 3 + c) * h + y) * w + x];
  return out;
}

}  // namespace ergan::nets
