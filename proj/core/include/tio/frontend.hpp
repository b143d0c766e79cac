#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tio/geometry.hpp"
#include "tio/image.hpp"

namespace tio {

struct BorderViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DegenerateConfiguration : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PinholeIntrinsics {
  double fx = 300.0, fy = 300.0, cx = 320.0, cy = 256.0;

  Vec3 bearing(double u, double v) const {
    Vec3 b((u - cx) / fx, (v - cy) / fy, 1.0);
    return b.normalized();
  }
  Eigen::Vector2d project(const Vec3& p) const {
    return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
  }
};

/// Fixed grid over the image used to enforce feature spacing.
class BinGrid {
 public:
  BinGrid(int rows, int cols, int img_width, int img_height);

  int binIndex(double x, double y) const;
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int numBins() const { return rows_ * cols_; }

 private:
  int rows_, cols_, width_, height_;
};

struct FastCorner {
  double x = 0.0, y = 0.0;
  double score = 0.0;
};

/// Brute-force FAST-9 over the 16-pixel Bresenham circle. Score is the
/// largest margin t for which the corner test still passes.
std::vector<FastCorner> fastDetect(const Image8& img, double threshold);

/// Gradient magnitude with separable 5x5 Sobel kernels at an integer
/// location. Throws BorderViolation within 2 px of the border.
double sobelMagnitude5(const Image8& img, int x, int y);

/// 256-bit rotation-compensated binary descriptor with a fixed,
/// deterministically seeded sampling pattern.
class BinaryDescriptor {
 public:
  static constexpr int kBytes = 32;
  using Bits = std::array<uint64_t, 4>;

  // Requires the location to be >= patchRadius() from the border.
  static Bits compute(const Image8& img, double x, double y);
  static int hamming(const Bits& a, const Bits& b);
  static int patchRadius() { return 20; }
};

struct KltParams {
  int pyramid_levels = 3;
  int window_radius = 10;  // 21x21 window
  int max_iterations = 30;
  double epsilon = 0.01;    // px
  double min_eigen = 1e-4;  // reject flat/aperture-limited patches
};

/// Image pyramid with 2x average-pooled levels, bilinear sampling.
class Pyramid {
 public:
  Pyramid(const Image8& img, int levels);
  const std::vector<float>& level(int l) const { return levels_[l]; }
  int width(int l) const { return widths_[l]; }
  int height(int l) const { return heights_[l]; }
  int numLevels() const { return int(levels_.size()); }
  float sample(int l, double x, double y) const;

 private:
  std::vector<std::vector<float>> levels_;
  std::vector<int> widths_, heights_;
};

/// Pyramidal Lucas-Kanade; returns the refined location in `curr`, or
/// nullopt if the solve fails to converge or leaves the image.
std::optional<Eigen::Vector2d> kltTrack(const Pyramid& prev, const Pyramid& curr,
                                        const Eigen::Vector2d& prev_pt,
                                        const Eigen::Vector2d& seed, const KltParams& p);

struct RansacParams {
  int max_iterations = 200;
  double confidence = 0.99;
  double sampson_threshold = 1e-3;  // normalized image coordinates
  uint64_t seed = 42;
};

struct EssentialResult {
  Mat3 essential = Mat3::Zero();
  std::vector<bool> inliers;
  int num_inliers = 0;
};

/// Seven-point minimal solver inside RANSAC (points in normalized image
/// coordinates, z = 1 plane). Throws DegenerateConfiguration for fewer
/// than 7 correspondences or when no minimal sample yields a real solution.
EssentialResult essentialRansac(const std::vector<Eigen::Vector2d>& pts1,
                                const std::vector<Eigen::Vector2d>& pts2,
                                const RansacParams& params = RansacParams());

/// Minimal solver only: up to 3 essential-matrix candidates from exactly 7
/// normalized correspondences.
std::vector<Mat3> sevenPointSolve(const std::vector<Eigen::Vector2d>& pts1,
                                  const std::vector<Eigen::Vector2d>& pts2);

double sampsonDistance(const Mat3& e, const Eigen::Vector2d& p1, const Eigen::Vector2d& p2);

struct FrontendParams {
  double fast_threshold = 12.0;
  double gradient_threshold = 500.0;
  int grid_rows = 8;
  int grid_cols = 10;
  int per_bin_cap = 2;
  int detect_trigger = 60;       // detect when active tracks drop below this
  int descriptor_max_hamming = 64;
  int outlier_window = 6;        // ring length for the 50% outlier rule
  double central_region_area = 0.2;
  KltParams klt;
  RansacParams ransac;
  PinholeIntrinsics intrinsics;
};

struct Observation {
  int64_t feature_id;
  Eigen::Vector2d px;
  Vec3 bearing;
};

struct FrameResult {
  double t = 0.0;
  bool valid = true;
  std::vector<Observation> observations;
  int tracked = 0;
  int detected = 0;
  int ransac_outliers = 0;
};

/// Stateful per-frame feature tracker. Frames must arrive in order.
class Frontend {
 public:
  explicit Frontend(const FrontendParams& params);

  FrameResult processFrame(const Image16& raw);
  // Same pipeline entered after external preprocessing (for tests).
  FrameResult processPreprocessed(const Image8& img8, double t);

  int activeTracks() const { return int(tracks_.size()); }
  void setGradientGateEnabled(bool on) { gate_enabled_ = on; }
  void setDescriptorCheckEnabled(bool on) { descriptor_check_enabled_ = on; }

 private:
  struct Track {
    int64_t id;
    Eigen::Vector2d pos;
    Eigen::Vector2d detection_pos;  // position cached at the last detection frame
    BinaryDescriptor::Bits descriptor;
    std::deque<bool> outlier_history;
    int age = 0;
    bool outlier_this_frame = false;
  };

  void detect(const Image8& img8);
  void runEssentialCheck();
  bool insideCentralRegion(const Eigen::Vector2d& p) const;

  FrontendParams p_;
  BinGrid grid_;
  std::map<int64_t, Track> tracks_;
  int64_t next_id_ = 0;
  std::optional<Image8> prev8_;
  std::optional<Pyramid> prev_pyr_;
  bool gate_enabled_ = true;
  bool descriptor_check_enabled_ = true;
  int img_width_ = 0, img_height_ = 0;
};

}  // namespace tio
