#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tio {

struct InvalidFrame : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  double t = 0.0;  // seconds
  bool valid = true;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T(0)) : width(w), height(h), data(size_t(w) * h, fill) {}

  T& at(int x, int y) { return data[size_t(y) * width + x]; }
  const T& at(int x, int y) const { return data[size_t(y) * width + x]; }
  bool inBounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

using Image16 = Image<uint16_t>;
using Image8 = Image<uint8_t>;

/// 3x3 Gaussian (sigma = 1), replicated borders, computed in double.
Image16 gaussian3x3(const Image16& img);

struct ClaheParams {
  int tiles_x = 8;
  int tiles_y = 8;
  double clip_limit = 4.0;  // relative to the uniform bin height
  int bins = 4096;
};

/// Contrast-limited adaptive histogram equalization on the 16-bit image,
/// bilinear blending between tile mappings. Output spans the 16-bit range.
Image16 clahe16(const Image16& img, const ClaheParams& params = ClaheParams());

/// Linear rescale of the (post-CLAHE) 16-bit image to 8 bits.
Image8 quantizeTo8(const Image16& img);

/// Full front-end preprocessing chain. Throws InvalidFrame on NUC dropout
/// frames (valid == false).
Image8 preprocess(const Image16& img, const ClaheParams& params = ClaheParams());

// Binary raster format: 16-byte little-endian header
//   bytes 0..2  magic "TIR"
//   byte  3     valid flag (0/1)
//   bytes 4..5  width  (u16)
//   bytes 6..7  height (u16)
//   bytes 8..15 timestamp in microseconds (i64)
// followed by width*height u16 row-major pixel values.
void writeRaster(const std::string& path, const Image16& img);
Image16 readRaster(const std::string& path);

}  // namespace tio
