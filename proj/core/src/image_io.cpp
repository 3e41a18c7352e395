#include "ergan/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace ergan::img {

RawImage load_raw(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot read image: " + path);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RawImage out;
  out.h = rgb.rows;
  out.w = rgb.cols;
  out.id = std::filesystem::path(path).filename().string();
  out.rgb.resize(static_cast<size_t>(out.h) * out.w * 3);
  for (int y = 0; y < out.h; ++y)
    std::copy_n(rgb.ptr<uint8_t>(y), static_cast<size_t>(out.w) * 3,
                out.rgb.data() + static_cast<size_t>(y) * out.w * 3);
  return out;
}

void save_png(const RawImage& im, const std::string& path) {
  cv::Mat rgb(im.h, im.w, CV_8UC3, const_cast<uint8_t*>(im.rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path, bgr)) throw DataError("cannot write image: " + path);
}

RawImage quantize(const FaceImage<float>& im) {
  RawImage out;
  out.h = im.height();
  out.w = im.width();
  out.id = im.source_id;
  out.rgb.resize(static_cast<size_t>(out.h) * out.w * 3);
  for (int64_t i = 0; i < im.pixels.numel(); ++i) {
    float v = (im.pixels[i] + 1.0f) * 127.5f;
    out.rgb[static_cast<size_t>(i)] =
        static_cast<uint8_t>(std::min(255.0f, std::max(0.0f, std::round(v))));
  }
  return out;
}

void save_png(const FaceImage<float>& im, const std::string& path) {
  save_png(quantize(im), path);
}

RawImage make_grid(const std::vector<FaceImage<float>>& tiles, int columns) {
  if (tiles.empty()) throw ConfigError("make_grid: no tiles");
  if (columns < 1) throw ConfigError("make_grid: columns must be >= 1");
  const int gutter = 2;
  int th = tiles[0].height(), tw = tiles[0].width();
  for (const auto& t : tiles)
    if (t.height() != th || t.width() != tw) throw ConfigError("make_grid: mixed tile sizes");
  int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
  RawImage out;
  out.h = rows * th + (rows - 1) * gutter;
  out.w = columns * tw + (columns - 1) * gutter;
  out.rgb.assign(static_cast<size_t>(out.h) * out.w * 3, 255);
  for (size_t i = 0; i < tiles.size(); ++i) {
    RawImage q = quantize(tiles[i]);
    int r = static_cast<int>(i) / columns, c = static_cast<int>(i) % columns;
    int y0 = r * (th + gutter), x0 = c * (tw + gutter);
    for (int y = 0; y < th; ++y)
      std::copy_n(q.rgb.data() + static_cast<size_t>(y) * tw * 3, static_cast<size_t>(tw) * 3,
                  out.rgb.data() + (static_cast<size_t>(y0 + y) * out.w + x0) * 3);
  }
  return out;
}

}  // namespace ergan::img
