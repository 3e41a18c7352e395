#pragma once

#include <string>
#include <vector>

#include "ergan/image.hpp"

namespace ergan::img {

// PNG/JPEG decode to interleaved RGB. Throws DataError on unreadable files.
RawImage load_raw(const std::string& path);

void save_png(const RawImage& im, const std::string& path);

// Quantizes [-1,1] to 8-bit and writes a PNG.
void save_png(const FaceImage<float>& im, const std::string& path);

RawImage quantize(const FaceImage<float>& im);

// Tiles images row-major with a 2-pixel white gutter; all tiles must share
// one resolution.
RawImage make_grid(const std::vector<FaceImage<float>>& tiles, int columns);

}  // namespace ergan::img
