#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ergan/errors.hpp"
#include "ergan/tensor.hpp"

namespace ergan::img {

enum class Domain { A_with_glasses, B_without_glasses, unknown };

inline const char* domain_name(Domain d) {
  switch (d) {
    case Domain::A_with_glasses: return "A_with_glasses";
    case Domain::B_without_glasses: return "B_without_glasses";
    default: return "unknown";
  }
}

// Aligned face in model range [-1,1], stored HxWx3.
template <typename S>
struct FaceImage {
  Tensor<S> pixels;
  Domain domain = Domain::unknown;
  std::string source_id;

  int height() const { return pixels.dim(0); }
  int width() const { return pixels.dim(1); }

  void validate() const {
    if (pixels.ndim() != 3 || pixels.dim(2) != 3)
      throw DataError("face image must be HxWx3");
    int h = height(), w = width();
    if (h < 16 || w < 16) throw DataError("face image smaller than 16x16");
    if (h % 2 != 0 || w % 2 != 0) throw DataError("face image dimensions must be even");
    for (int64_t i = 0; i < pixels.numel(); ++i)
      if (!(pixels[i] >= S(-1) && pixels[i] <= S(1)))
        throw DataError("face image pixel outside [-1,1]");
  }
};

// Fractional rectangle over the eye band of an aligned face.
struct EyeBox {
  double row_lo_frac = 0.40;
  double col_lo_frac = 0.20;
  double row_hi_frac = 0.65;
  double col_hi_frac = 0.75;

  void validate() const {
    if (!(0.0 <= row_lo_frac && row_lo_frac < row_hi_frac && row_hi_frac <= 1.0) ||
        !(0.0 <= col_lo_frac && col_lo_frac < col_hi_frac && col_hi_frac <= 1.0))
      throw ConfigError("eye box fractions out of order");
  }
};

struct PixelRect {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
  int rows() const { return r1 - r0; }
  int cols() const { return c1 - c0; }
};

inline PixelRect eye_region_pixels(const EyeBox& box, int h, int w) {
  box.validate();
  if (h < 16 || w < 16) throw ConfigError("eye region requires at least a 16x16 image");
  PixelRect r;
  r.r0 = static_cast<int>(std::floor(box.row_lo_frac * h));
  r.r1 = static_cast<int>(std::floor(box.row_hi_frac * h));
  r.c0 = static_cast<int>(std::floor(box.col_lo_frac * w));
  r.c1 = static_cast<int>(std::floor(box.col_hi_frac * w));
  if (!(r.r0 < r.r1 && r.c0 < r.c1)) throw ConfigError("eye region degenerates at this size");
  return r;
}

// Pixels inside the box become 0 (mid-gray in model range); everything else is
// copied bit-exact.
template <typename S>
FaceImage<S> mask_eye_region(const FaceImage<S>& im, const EyeBox& box) {
  im.validate();
  PixelRect r = eye_region_pixels(box, im.height(), im.width());
  FaceImage<S> out = im;
  int w = im.width();
  for (int y = r.r0; y < r.r1; ++y)
    for (int x = r.c0; x < r.c1; ++x)
      for (int ch = 0; ch < 3; ++ch) out.pixels[(static_cast<int64_t>(y) * w + x) * 3 + ch] = S(0);
  return out;
}

template <typename S>
Tensor<S> crop_eye_region(const FaceImage<S>& im, const EyeBox& box) {
  im.validate();
  PixelRect r = eye_region_pixels(box, im.height(), im.width());
  Tensor<S> patch({r.rows(), r.cols(), 3});
  int w = im.width();
  for (int y = 0; y < r.rows(); ++y)
    for (int x = 0; x < r.cols(); ++x)
      for (int ch = 0; ch < 3; ++ch)
        patch[(static_cast<int64_t>(y) * r.cols() + x) * 3 + ch] =
            im.pixels[(static_cast<int64_t>(y + r.r0) * w + (x + r.c0)) * 3 + ch];
  return patch;
}

template <typename S>
FaceImage<S> composite_eye_region(const FaceImage<S>& im, const Tensor<S>& patch,
                                  const EyeBox& box) {
  im.validate();
  PixelRect r = eye_region_pixels(box, im.height(), im.width());
  if (patch.ndim() != 3 || patch.dim(0) != r.rows() || patch.dim(1) != r.cols() ||
      patch.dim(2) != 3)
    throw ConfigError("eye patch shape does not match box at this resolution");
  FaceImage<S> out = im;
  int w = im.width();
  for (int y = 0; y < r.rows(); ++y)
    for (int x = 0; x < r.cols(); ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.pixels[(static_cast<int64_t>(y + r.r0) * w + (x + r.c0)) * 3 + ch] =
            patch[(static_cast<int64_t>(y) * r.cols() + x) * 3 + ch];
  return out;
}

// Interleaved 8-bit RGB as decoded from disk.
struct RawImage {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;
  std::string id;

  uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<size_t>(y) * w + x) * 3 + c];
  }
};

inline RawImage center_crop(const RawImage& in, int side) {
  if (in.h < side || in.w < side) throw DataError("image " + in.id + " smaller than crop size");
  RawImage out;
  out.h = side;
  out.w = side;
  out.id = in.id;
  out.rgb.resize(static_cast<size_t>(side) * side * 3);
  int y0 = (in.h - side) / 2, x0 = (in.w - side) / 2;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < 3; ++c)
        out.rgb[(static_cast<size_t>(y) * side + x) * 3 + c] = in.at(y + y0, x + x0, c);
  return out;
}

// Half-pixel-centered bilinear resize, 8-bit in, float out in [0,255].
template <typename S>
Tensor<S> resize_bilinear(const RawImage& in, int oh, int ow) {
  Tensor<S> out({oh, ow, 3});
  double sy = static_cast<double>(in.h) / oh;
  double sx = static_cast<double>(in.w) / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int ya = std::min(std::max(y0, 0), in.h - 1);
    int yb = std::min(std::max(y0 + 1, 0), in.h - 1);
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int xa = std::min(std::max(x0, 0), in.w - 1);
      int xb = std::min(std::max(x0 + 1, 0), in.w - 1);
      for (int c = 0; c < 3; ++c) {
        double v = (1 - wy) * ((1 - wx) * in.at(ya, xa, c) + wx * in.at(ya, xb, c)) +
                   wy * ((1 - wx) * in.at(yb, xa, c) + wx * in.at(yb, xb, c));
        out[(static_cast<int64_t>(y) * ow + x) * 3 + c] = static_cast<S>(v);
      }
    }
  }
  return out;
}

template <typename S>
FaceImage<S> flip_horizontal(const FaceImage<S>& im) {
  FaceImage<S> out = im;
  int h = im.height(), w = im.width();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.pixels[(static_cast<int64_t>(y) * w + x) * 3 + c] =
            im.pixels[(static_cast<int64_t>(y) * w + (w - 1 - x)) * 3 + c];
  return out;
}

// Center-crop to crop_side, bilinear resize to resolution, map [0,255] to
// [-1,1]; training mode flips horizontally with probability 1/2. With
// training=false the rng is never consumed and the result is a pure function
// of the input.
template <typename S>
FaceImage<S> preprocess(const RawImage& raw, int resolution, bool training, std::mt19937_64& rng,
                        int crop_side = 160) {
  RawImage cropped = center_crop(raw, crop_side);
  Tensor<S> resized = resize_bilinear<S>(cropped, resolution, resolution);
  FaceImage<S> out;
  out.pixels = Tensor<S>({resolution, resolution, 3});
  out.source_id = raw.id;
  for (int64_t i = 0; i < resized.numel(); ++i) {
    S v = resized[i] / S(127.5) - S(1);
    out.pixels[i] = std::min(S(1), std::max(S(-1), v));
  }
  if (training && (rng() & 1ull)) out = flip_horizontal(out);
  return out;
}

}  // namespace ergan::img
