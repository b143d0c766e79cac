#include "tio/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace tio {

Image16 gaussian3x3(const Image16& img) {
  // 1D weights for sigma = 1 over {-1, 0, 1}, normalized.
  static const double k1 = 1.0 / (1.0 + 2.0 * std::exp(-0.5));
  static const double k0 = std::exp(-0.5) * k1;
  const double w[3] = {k0, k1, k0};

  Image16 out = img;
  std::vector<double> tmp(size_t(img.width) * img.height);
  auto clampx = [&](int x) { return std::clamp(x, 0, img.width - 1); };
  auto clampy = [&](int y) { return std::clamp(y, 0, img.height - 1); };
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0.0;
      for (int k = -1; k <= 1; ++k) s += w[k + 1] * img.at(clampx(x + k), y);
      tmp[size_t(y) * img.width + x] = s;
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0.0;
      for (int k = -1; k <= 1; ++k) s += w[k + 1] * tmp[size_t(clampy(y + k)) * img.width + x];
      out.at(x, y) = static_cast<uint16_t>(std::lround(std::clamp(s, 0.0, 65535.0)));
    }
  return out;
}

Image16 clahe16(const Image16& img, const ClaheParams& p) {
  const int tx = std::max(1, p.tiles_x), ty = std::max(1, p.tiles_y);
  const int bins = p.bins;
  const double bin_scale = double(bins) / 65536.0;

  // Per-tile clipped-histogram equalization mapping (bin -> output level).
  std::vector<std::vector<double>> lut(size_t(tx) * ty, std::vector<double>(bins, 0.0));
  const double tile_w = double(img.width) / tx;
  const double tile_h = double(img.height) / ty;

  for (int tyi = 0; tyi < ty; ++tyi) {
    for (int txi = 0; txi < tx; ++txi) {
      const int x0 = int(txi * tile_w), x1 = std::min(img.width, int((txi + 1) * tile_w));
      const int y0 = int(tyi * tile_h), y1 = std::min(img.height, int((tyi + 1) * tile_h));
      const int npix = std::max(1, (x1 - x0) * (y1 - y0));
      std::vector<double> hist(bins, 0.0);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) hist[size_t(img.at(x, y) * bin_scale)] += 1.0;

      const double clip = std::max(1.0, p.clip_limit * npix / bins);
      double excess = 0.0;
      for (double& h : hist)
        if (h > clip) {
          excess += h - clip;
          h = clip;
        }
      const double redist = excess / bins;
      for (double& h : hist) h += redist;

      double cum = 0.0;
      auto& m = lut[size_t(tyi) * tx + txi];
      for (int b = 0; b < bins; ++b) {
        cum += hist[b];
        m[b] = 65535.0 * cum / npix;
      }
    }
  }

  // Bilinear interpolation between the four surrounding tile mappings.
  Image16 out = img;
  for (int y = 0; y < img.height; ++y) {
    const double fy = (y + 0.5) / tile_h - 0.5;
    int ty0 = int(std::floor(fy));
    double wy = fy - ty0;
    ty0 = std::clamp(ty0, 0, ty - 1);
    const int ty1 = std::min(ty0 + 1, ty - 1);
    if (ty0 == ty1) wy = 0.0;
    for (int x = 0; x < img.width; ++x) {
      const double fx = (x + 0.5) / tile_w - 0.5;
      int tx0 = int(std::floor(fx));
      double wx = fx - tx0;
      tx0 = std::clamp(tx0, 0, tx - 1);
      const int tx1 = std::min(tx0 + 1, tx - 1);
      const double wxc = (tx0 == tx1) ? 0.0 : wx;
      const int b = int(img.at(x, y) * bin_scale);
      const double v00 = lut[size_t(ty0) * tx + tx0][b];
      const double v01 = lut[size_t(ty0) * tx + tx1][b];
      const double v10 = lut[size_t(ty1) * tx + tx0][b];
      const double v11 = lut[size_t(ty1) * tx + tx1][b];
      const double v = (1 - wy) * ((1 - wxc) * v00 + wxc * v01) + wy * ((1 - wxc) * v10 + wxc * v11);
      out.at(x, y) = static_cast<uint16_t>(std::lround(std::clamp(v, 0.0, 65535.0)));
    }
  }
  return out;
}

Image8 quantizeTo8(const Image16& img) {
  Image8 out(img.width, img.height);
  out.t = img.t;
  out.valid = img.valid;
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = uint8_t(img.data[i] >> 8);
  return out;
}

Image8 preprocess(const Image16& img, const ClaheParams& params) {
  if (!img.valid) throw InvalidFrame("preprocess: frame flagged invalid (NUC dropout)");
  return quantizeTo8(clahe16(gaussian3x3(img), params));
}

void writeRaster(const std::string& path, const Image16& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("writeRaster: cannot open " + path);
  char header[16] = {};
  header[0] = 'T';
  header[1] = 'I';
  header[2] = 'R';
  header[3] = img.valid ? 1 : 0;
  const uint16_t w = uint16_t(img.width), h = uint16_t(img.height);
  std::memcpy(header + 4, &w, 2);
  std::memcpy(header + 6, &h, 2);
  const int64_t t_us = int64_t(std::llround(img.t * 1e6));
  std::memcpy(header + 8, &t_us, 8);
  out.write(header, 16);
  out.write(reinterpret_cast<const char*>(img.data.data()), std::streamsize(img.data.size() * 2));
}

Image16 readRaster(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("readRaster: cannot open " + path);
  char header[16];
  in.read(header, 16);
  if (!in || header[0] != 'T' || header[1] != 'I' || header[2] != 'R')
    throw std::runtime_error("readRaster: bad magic in " + path);
  uint16_t w, h;
  int64_t t_us;
  std::memcpy(&w, header + 4, 2);
  std::memcpy(&h, header + 6, 2);
  std::memcpy(&t_us, header + 8, 8);
  Image16 img(w, h);
  img.valid = header[3] != 0;
  img.t = double(t_us) * 1e-6;
  in.read(reinterpret_cast<char*>(img.data.data()), std::streamsize(img.data.size() * 2));
  if (!in) throw std::runtime_error("readRaster: truncated file " + path);
  return img;
}

}  // namespace tio
