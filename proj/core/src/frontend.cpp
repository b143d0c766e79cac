#include "tio/frontend.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

namespace tio {

namespace {

// xorshift64*; std:: distributions are not bit-stable across libraries.
struct Rng {
  uint64_t s;
  explicit Rng(uint64_t seed) : s(seed ? seed : 0x9e3779b97f4a7c15ull) {}
  uint64_t next() {
    s ^= s >> 12;
    s ^= s << 25;
    s ^= s >> 27;
    return s * 0x2545f4914f6cdd1dull;
  }
  uint32_t bounded(uint32_t n) { return uint32_t(next() % n); }
  double uniform() { return double(next() >> 11) * (1.0 / 9007199254740992.0); }
};

const std::array<std::pair<int, int>, 16> kFastCircle = {{{0, -3},
                                                          {1, -3},
                                                          {2, -2},
                                                          {3, -1},
                                                          {3, 0},
                                                          {3, 1},
                                                          {2, 2},
                                                          {1, 3},
                                                          {0, 3},
                                                          {-1, 3},
                                                          {-2, 2},
                                                          {-3, 1},
                                                          {-3, 0},
                                                          {-3, -1},
                                                          {-2, -2},
                                                          {-1, -3}}};

}  // namespace

BinGrid::BinGrid(int rows, int cols, int img_width, int img_height)
    : rows_(rows), cols_(cols), width_(img_width), height_(img_height) {}

int BinGrid::binIndex(double x, double y) const {
  int c = std::clamp(int(x * cols_ / width_), 0, cols_ - 1);
  int r = std::clamp(int(y * rows_ / height_), 0, rows_ - 1);
  return r * cols_ + c;
}

std::vector<FastCorner> fastDetect(const Image8& img, double threshold) {
  std::vector<FastCorner> corners;
  double circle[16];
  for (int y = 3; y < img.height - 3; ++y) {
    for (int x = 3; x < img.width - 3; ++x) {
      const double c = img.at(x, y);
      for (int i = 0; i < 16; ++i)
        circle[i] = img.at(x + kFastCircle[i].first, y + kFastCircle[i].second);
      // Score: best over all 9-long wrapped arcs of the weakest margin.
      double score = 0.0;
      for (int start = 0; start < 16; ++start) {
        double min_bright = 1e9, min_dark = 1e9;
        for (int k = 0; k < 9; ++k) {
          const double v = circle[(start + k) & 15];
          min_bright = std::min(min_bright, v - c);
          min_dark = std::min(min_dark, c - v);
        }
        score = std::max(score, std::max(min_bright, min_dark));
      }
      if (score > threshold) corners.push_back({double(x), double(y), score});
    }
  }
  return corners;
}

double sobelMagnitude5(const Image8& img, int x, int y) {
  if (x < 2 || y < 2 || x >= img.width - 2 || y >= img.height - 2)
    throw BorderViolation("sobelMagnitude5: location within 2 px of border");
  static const double smooth[5] = {1, 4, 6, 4, 1};
  static const double deriv[5] = {-1, -2, 0, 2, 1};
  double gx = 0.0, gy = 0.0;
  for (int j = -2; j <= 2; ++j)
    for (int i = -2; i <= 2; ++i) {
      const double v = img.at(x + i, y + j);
      gx += deriv[i + 2] * smooth[j + 2] * v;
      gy += smooth[i + 2] * deriv[j + 2] * v;
    }
  return std::hypot(gx, gy);
}

namespace {

double bilinear8(const Image8& img, double x, double y) {
  x = std::clamp(x, 0.0, double(img.width - 1));
  y = std::clamp(y, 0.0, double(img.height - 1));
  const int x0 = std::min(int(x), img.width - 2 >= 0 ? img.width - 2 : 0);
  const int y0 = std::min(int(y), img.height - 2 >= 0 ? img.height - 2 : 0);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * img.at(x0, y0) + fx * img.at(x0 + 1, y0)) +
         fy * ((1 - fx) * img.at(x0, y0 + 1) + fx * img.at(x0 + 1, y0 + 1));
}

struct BriefPattern {
  std::array<std::array<double, 4>, 256> pairs;  // x1 y1 x2 y2
  BriefPattern() {
    Rng rng(0x5eedUL);
    const double radius = 13.0;
    for (auto& p : pairs) {
      for (int attempt = 0;; ++attempt) {
        double x1 = (rng.uniform() * 2 - 1) * radius;
        double y1 = (rng.uniform() * 2 - 1) * radius;
        double x2 = (rng.uniform() * 2 - 1) * radius;
        double y2 = (rng.uniform() * 2 - 1) * radius;
        if (x1 * x1 + y1 * y1 <= radius * radius && x2 * x2 + y2 * y2 <= radius * radius) {
          p = {x1, y1, x2, y2};
          break;
        }
      }
    }
  }
};
const BriefPattern kPattern;

}  // namespace

BinaryDescriptor::Bits BinaryDescriptor::compute(const Image8& img, double x, double y) {
  // Intensity-centroid orientation over the sampling disc.
  double m10 = 0.0, m01 = 0.0;
  const int r = 13;
  for (int j = -r; j <= r; ++j)
    for (int i = -r; i <= r; ++i) {
      if (i * i + j * j > r * r) continue;
      const double v = bilinear8(img, x + i, y + j);
      m10 += i * v;
      m01 += j * v;
    }
  const double angle = std::atan2(m01, m10);
  const double ca = std::cos(angle), sa = std::sin(angle);

  Bits bits{};
  for (int k = 0; k < 256; ++k) {
    const auto& p = kPattern.pairs[k];
    const double ax = ca * p[0] - sa * p[1], ay = sa * p[0] + ca * p[1];
    const double bx = ca * p[2] - sa * p[3], by = sa * p[2] + ca * p[3];
    const bool bit = bilinear8(img, x + ax, y + ay) < bilinear8(img, x + bx, y + by);
    if (bit) bits[k >> 6] |= (uint64_t(1) << (k & 63));
  }
  return bits;
}

int BinaryDescriptor::hamming(const Bits& a, const Bits& b) {
  int d = 0;
  for (int i = 0; i < 4; ++i) d += __builtin_popcountll(a[i] ^ b[i]);
  return d;
}

Pyramid::Pyramid(const Image8& img, int levels) {
  widths_.push_back(img.width);
  heights_.push_back(img.height);
  levels_.emplace_back(img.data.begin(), img.data.end());
  for (int l = 1; l < levels; ++l) {
    const int pw = widths_.back(), ph = heights_.back();
    const int w = pw / 2, h = ph / 2;
    if (w < 8 || h < 8) break;
    const auto& src = levels_.back();
    std::vector<float> dst(size_t(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        dst[size_t(y) * w + x] =
            0.25f * (src[size_t(2 * y) * pw + 2 * x] + src[size_t(2 * y) * pw + 2 * x + 1] +
                     src[size_t(2 * y + 1) * pw + 2 * x] + src[size_t(2 * y + 1) * pw + 2 * x + 1]);
    levels_.push_back(std::move(dst));
    widths_.push_back(w);
    heights_.push_back(h);
  }
}

float Pyramid::sample(int l, double x, double y) const {
  const int w = widths_[l], h = heights_[l];
  x = std::clamp(x, 0.0, double(w - 1));
  y = std::clamp(y, 0.0, double(h - 1));
  const int x0 = std::min(int(x), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(int(y), h - 2 >= 0 ? h - 2 : 0);
  const double fx = x - x0, fy = y - y0;
  const auto& d = levels_[l];
  return float((1 - fy) * ((1 - fx) * d[size_t(y0) * w + x0] + fx * d[size_t(y0) * w + x0 + 1]) +
               fy * ((1 - fx) * d[size_t(y0 + 1) * w + x0] + fx * d[size_t(y0 + 1) * w + x0 + 1]));
}

std::optional<Eigen::Vector2d> kltTrack(const Pyramid& prev, const Pyramid& curr,
                                        const Eigen::Vector2d& prev_pt,
                                        const Eigen::Vector2d& seed, const KltParams& p) {
  const int top = std::min(p.pyramid_levels, prev.numLevels()) - 1;
  const double scale_top = std::pow(2.0, top);
  Eigen::Vector2d d = (seed - prev_pt) / scale_top;  // displacement at coarsest level

  for (int l = top; l >= 0; --l) {
    const double s = std::pow(2.0, l);
    const Eigen::Vector2d base = prev_pt / s;
    const int r = p.window_radius;

    // Template gradients and Hessian at the previous-image patch.
    Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
    std::vector<double> tmpl((2 * r + 1) * (2 * r + 1));
    std::vector<double> gx(tmpl.size()), gy(tmpl.size());
    int idx = 0;
    for (int j = -r; j <= r; ++j)
      for (int i = -r; i <= r; ++i, ++idx) {
        const double x = base.x() + i, y = base.y() + j;
        tmpl[idx] = prev.sample(l, x, y);
        gx[idx] = 0.5 * (prev.sample(l, x + 1, y) - prev.sample(l, x - 1, y));
        gy[idx] = 0.5 * (prev.sample(l, x, y + 1) - prev.sample(l, x, y - 1));
        g(0, 0) += gx[idx] * gx[idx];
        g(0, 1) += gx[idx] * gy[idx];
        g(1, 1) += gy[idx] * gy[idx];
      }
    g(1, 0) = g(0, 1);
    const double npix = double(tmpl.size());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(g / npix);
    if (es.eigenvalues().minCoeff() < p.min_eigen) return std::nullopt;

    bool converged = false;
    for (int it = 0; it < p.max_iterations; ++it) {
      Eigen::Vector2d b = Eigen::Vector2d::Zero();
      idx = 0;
      for (int j = -r; j <= r; ++j)
        for (int i = -r; i <= r; ++i, ++idx) {
          const double diff =
              curr.sample(l, base.x() + d.x() + i, base.y() + d.y() + j) - tmpl[idx];
          b.x() += diff * gx[idx];
          b.y() += diff * gy[idx];
        }
      const Eigen::Vector2d step = g.ldlt().solve(-b);
      d += step;
      if (!d.allFinite() || d.norm() > 4.0 * (2 * r + 1)) return std::nullopt;
      if (step.norm() < p.epsilon) {
        converged = true;
        break;
      }
    }
    if (l == 0 && !converged) return std::nullopt;
    if (l > 0) d *= 2.0;
  }

  const Eigen::Vector2d out = prev_pt + d;
  if (out.x() < 1.0 || out.y() < 1.0 || out.x() > curr.width(0) - 2.0 ||
      out.y() > curr.height(0) - 2.0)
    return std::nullopt;
  return out;
}

std::vector<Mat3> sevenPointSolve(const std::vector<Eigen::Vector2d>& pts1,
                                  const std::vector<Eigen::Vector2d>& pts2) {
  if (pts1.size() != 7 || pts2.size() != 7)
    throw std::invalid_argument("sevenPointSolve: exactly 7 correspondences required");
  Eigen::Matrix<double, 7, 9> a;
  for (int i = 0; i < 7; ++i) {
    const double x1 = pts1[i].x(), y1 = pts1[i].y();
    const double x2 = pts2[i].x(), y2 = pts2[i].y();
    a.row(i) << x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, 1.0;
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 7, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> f1v = svd.matrixV().col(7);
  const Eigen::Matrix<double, 9, 1> f2v = svd.matrixV().col(8);
  Mat3 f1 = Eigen::Map<const Mat3>(f1v.data()).transpose();
  Mat3 f2 = Eigen::Map<const Mat3>(f2v.data()).transpose();

  // det(alpha F1 + (1 - alpha) F2) is cubic in alpha; fit from 4 samples.
  auto det_at = [&](double alpha) { return Mat3(alpha * f1 + (1.0 - alpha) * f2).determinant(); };
  Eigen::Matrix4d vand;
  Eigen::Vector4d rhs;
  for (int k = 0; k < 4; ++k) {
    const double alpha = double(k);
    vand.row(k) << alpha * alpha * alpha, alpha * alpha, alpha, 1.0;
    rhs(k) = det_at(alpha);
  }
  const Eigen::Vector4d c = vand.fullPivLu().solve(rhs);  // c3 a^3 + c2 a^2 + c1 a + c0

  std::vector<double> roots;
  const double scale = std::abs(c(0)) + std::abs(c(1)) + std::abs(c(2)) + std::abs(c(3));
  if (std::abs(c(0)) > 1e-12 * scale) {
    Mat3 companion = Mat3::Zero();
    companion(0, 0) = -c(1) / c(0);
    companion(0, 1) = -c(2) / c(0);
    companion(0, 2) = -c(3) / c(0);
    companion(1, 0) = 1.0;
    companion(2, 1) = 1.0;
    Eigen::EigenSolver<Mat3> es(companion);
    for (int i = 0; i < 3; ++i)
      if (std::abs(es.eigenvalues()(i).imag()) < 1e-8 * (1.0 + std::abs(es.eigenvalues()(i).real())))
        roots.push_back(es.eigenvalues()(i).real());
  } else if (std::abs(c(1)) > 1e-12 * scale) {
    const double disc = c(2) * c(2) - 4.0 * c(1) * c(3);
    if (disc >= 0.0) {
      roots.push_back((-c(2) + std::sqrt(disc)) / (2.0 * c(1)));
      roots.push_back((-c(2) - std::sqrt(disc)) / (2.0 * c(1)));
    }
  } else if (std::abs(c(2)) > 1e-12 * scale) {
    roots.push_back(-c(3) / c(2));
  }

  std::vector<Mat3> out;
  for (double alpha : roots) {
    Mat3 e = alpha * f1 + (1.0 - alpha) * f2;
    const double n = e.norm();
    if (n > 1e-12 && e.allFinite()) out.push_back(e / n);
  }
  return out;
}

double sampsonDistance(const Mat3& e, const Eigen::Vector2d& p1, const Eigen::Vector2d& p2) {
  const Vec3 x1(p1.x(), p1.y(), 1.0);
  const Vec3 x2(p2.x(), p2.y(), 1.0);
  const Vec3 ex1 = e * x1;
  const Vec3 etx2 = e.transpose() * x2;
  const double num = x2.dot(ex1);
  const double den = ex1.head<2>().squaredNorm() + etx2.head<2>().squaredNorm();
  if (den < 1e-18) return 1e18;
  return num * num / den;
}

EssentialResult essentialRansac(const std::vector<Eigen::Vector2d>& pts1,
                                const std::vector<Eigen::Vector2d>& pts2,
                                const RansacParams& p) {
  const int n = int(pts1.size());
  if (n < 7 || pts2.size() != pts1.size())
    throw DegenerateConfiguration("essentialRansac: need at least 7 correspondences");

  Rng rng(p.seed);
  EssentialResult best;
  bool any_solution = false;
  int iterations = p.max_iterations;

  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;

  for (int it = 0; it < iterations; ++it) {
    // Partial Fisher-Yates for a 7-subset.
    for (int k = 0; k < 7; ++k) std::swap(idx[k], idx[k + rng.bounded(uint32_t(n - k))]);
    std::vector<Eigen::Vector2d> s1(7), s2(7);
    for (int k = 0; k < 7; ++k) {
      s1[k] = pts1[idx[k]];
      s2[k] = pts2[idx[k]];
    }
    std::vector<Mat3> candidates;
    try {
      candidates = sevenPointSolve(s1, s2);
    } catch (const std::exception&) {
      continue;
    }
    for (const Mat3& e : candidates) {
      any_solution = true;
      std::vector<bool> inliers(n, false);
      int count = 0;
      for (int i = 0; i < n; ++i) {
        if (sampsonDistance(e, pts1[i], pts2[i]) < p.sampson_threshold) {
          inliers[i] = true;
          ++count;
        }
      }
      if (count > best.num_inliers) {
        best.essential = e;
        best.inliers = std::move(inliers);
        best.num_inliers = count;
        // Adaptive early exit at the requested confidence.
        const double w = double(count) / n;
        const double p_all = std::pow(w, 7.0);
        if (p_all > 1e-12) {
          const int needed =
              int(std::ceil(std::log(1.0 - p.confidence) / std::log(1.0 - p_all)));
          iterations = std::clamp(needed, it + 1, p.max_iterations);
        }
      }
    }
  }
  if (!any_solution)
    throw DegenerateConfiguration("essentialRansac: no minimal sample yielded a real solution");
  return best;
}

Frontend::Frontend(const FrontendParams& params)
    : p_(params), grid_(params.grid_rows, params.grid_cols, 1, 1) {}

bool Frontend::insideCentralRegion(const Eigen::Vector2d& pt) const {
  const double f = std::sqrt(p_.central_region_area);
  const double x0 = 0.5 * img_width_ * (1.0 - f), x1 = 0.5 * img_width_ * (1.0 + f);
  const double y0 = 0.5 * img_height_ * (1.0 - f), y1 = 0.5 * img_height_ * (1.0 + f);
  return pt.x() >= x0 && pt.x() <= x1 && pt.y() >= y0 && pt.y() <= y1;
}

FrameResult Frontend::processFrame(const Image16& raw) {
  if (!raw.valid) {
    // NUC dropout: freeze; tracks are re-validated on the next valid frame.
    FrameResult r;
    r.t = raw.t;
    r.valid = false;
    return r;
  }
  return processPreprocessed(preprocess(raw), raw.t);
}

FrameResult Frontend::processPreprocessed(const Image8& img8, double t) {
  FrameResult result;
  result.t = t;
  img_width_ = img8.width;
  img_height_ = img8.height;
  if (grid_.numBins() == 0 || prev8_ == std::nullopt)
    grid_ = BinGrid(p_.grid_rows, p_.grid_cols, img8.width, img8.height);

  Pyramid pyr(img8, p_.klt.pyramid_levels);

  if (prev_pyr_ && !tracks_.empty()) {
    std::vector<int64_t> dead;
    for (auto& [id, tr] : tracks_) {
      auto next = kltTrack(*prev_pyr_, pyr, tr.pos, tr.pos, p_.klt);
      bool ok = next.has_value();
      if (ok && descriptor_check_enabled_) {
        const auto desc = BinaryDescriptor::compute(img8, next->x(), next->y());
        if (BinaryDescriptor::hamming(desc, tr.descriptor) > p_.descriptor_max_hamming) ok = false;
      }
      if (!ok) {
        dead.push_back(id);
        continue;
      }
      tr.pos = *next;
      tr.age += 1;
      tr.outlier_this_frame = false;
      ++result.tracked;
    }
    for (int64_t id : dead) tracks_.erase(id);

    // Per-bin cap: keep the oldest tracks in an over-full bin.
    std::map<int, std::vector<int64_t>> bins;
    for (auto& [id, tr] : tracks_) bins[grid_.binIndex(tr.pos.x(), tr.pos.y())].push_back(id);
    for (auto& [bin, ids] : bins) {
      if (int(ids.size()) <= p_.per_bin_cap) continue;
      std::sort(ids.begin(), ids.end(), [&](int64_t a, int64_t b) {
        if (tracks_[a].age != tracks_[b].age) return tracks_[a].age > tracks_[b].age;
        return a < b;
      });
      for (size_t k = p_.per_bin_cap; k < ids.size(); ++k) tracks_.erase(ids[k]);
    }

    runEssentialCheck();
    for (auto& [id, tr] : tracks_)
      if (tr.outlier_this_frame) ++result.ransac_outliers;
  }

  if (int(tracks_.size()) < p_.detect_trigger) {
    const size_t before = tracks_.size();
    detect(img8);
    result.detected = int(tracks_.size() - before);
  } else {
    // Central-region scale anchor: keep at least one track near the
    // optical center at all times.
    bool have_central = false;
    for (const auto& [id, tr] : tracks_)
      if (insideCentralRegion(tr.pos)) {
        have_central = true;
        break;
      }
    if (!have_central) {
      auto corners = fastDetect(img8, p_.fast_threshold);
      std::set<int> occupied;
      for (const auto& [id, tr] : tracks_) occupied.insert(grid_.binIndex(tr.pos.x(), tr.pos.y()));
      const FastCorner* bestc = nullptr;
      for (const auto& c : corners) {
        if (!insideCentralRegion({c.x, c.y})) continue;
        if (occupied.count(grid_.binIndex(c.x, c.y))) continue;
        if (c.x < 2 || c.y < 2 || c.x >= img8.width - 2 || c.y >= img8.height - 2) continue;
        if (gate_enabled_ && sobelMagnitude5(img8, int(c.x), int(c.y)) <= p_.gradient_threshold)
          continue;
        if (bestc == nullptr || c.score > bestc->score) bestc = &c;
      }
      if (bestc != nullptr) {
        Track tr;
        tr.id = next_id_++;
        tr.pos = {bestc->x, bestc->y};
        tr.detection_pos = tr.pos;
        tr.descriptor = BinaryDescriptor::compute(img8, bestc->x, bestc->y);
        tracks_.emplace(tr.id, std::move(tr));
        ++result.detected;
      }
    }
  }

  for (const auto& [id, tr] : tracks_) {
    if (tr.outlier_this_frame) continue;
    Observation obs;
    obs.feature_id = id;
    obs.px = tr.pos;
    obs.bearing = p_.intrinsics.bearing(tr.pos.x(), tr.pos.y());
    result.observations.push_back(obs);
  }

  prev8_ = img8;
  prev_pyr_.emplace(img8, p_.klt.pyramid_levels);
  return result;
}

void Frontend::runEssentialCheck() {
  std::vector<int64_t> ids;
  std::vector<Eigen::Vector2d> det_pts, cur_pts;
  const auto& K = p_.intrinsics;
  for (const auto& [id, tr] : tracks_) {
    if (tr.age < 1) continue;
    ids.push_back(id);
    det_pts.push_back({(tr.detection_pos.x() - K.cx) / K.fx, (tr.detection_pos.y() - K.cy) / K.fy});
    cur_pts.push_back({(tr.pos.x() - K.cx) / K.fx, (tr.pos.y() - K.cy) / K.fy});
  }
  if (int(ids.size()) < 7) return;

  EssentialResult res;
  try {
    res = essentialRansac(det_pts, cur_pts, p_.ransac);
  } catch (const DegenerateConfiguration&) {
    return;
  }
  std::vector<int64_t> dead;
  for (size_t k = 0; k < ids.size(); ++k) {
    Track& tr = tracks_[ids[k]];
    const bool outlier = !res.inliers[k];
    tr.outlier_this_frame = outlier;
    tr.outlier_history.push_back(outlier);
    while (int(tr.outlier_history.size()) > p_.outlier_window) tr.outlier_history.pop_front();
    if (int(tr.outlier_history.size()) >= p_.outlier_window) {
      int bad = 0;
      for (bool b : tr.outlier_history) bad += b ? 1 : 0;
      if (2 * bad > int(tr.outlier_history.size())) dead.push_back(ids[k]);
    }
  }
  for (int64_t id : dead) tracks_.erase(id);
}

void Frontend::detect(const Image8& img8) {
  auto corners = fastDetect(img8, p_.fast_threshold);

  std::set<int> occupied;
  for (const auto& [id, tr] : tracks_) occupied.insert(grid_.binIndex(tr.pos.x(), tr.pos.y()));

  // Best gate-passing corner per unoccupied bin.
  std::map<int, const FastCorner*> best;
  const int margin = 3;
  for (const auto& c : corners) {
    if (c.x < margin || c.y < margin || c.x >= img8.width - margin || c.y >= img8.height - margin)
      continue;
    if (gate_enabled_ && sobelMagnitude5(img8, int(c.x), int(c.y)) <= p_.gradient_threshold)
      continue;
    const int bin = grid_.binIndex(c.x, c.y);
    if (occupied.count(bin)) continue;
    auto it = best.find(bin);
    if (it == best.end() || c.score > it->second->score) best[bin] = &c;
  }

  bool central_seeded = false;
  for (const auto& [id, tr] : tracks_)
    if (insideCentralRegion(tr.pos)) central_seeded = true;

  for (const auto& [bin, c] : best) {
    Track tr;
    tr.id = next_id_++;
    tr.pos = {c->x, c->y};
    tr.detection_pos = tr.pos;
    tr.descriptor = BinaryDescriptor::compute(img8, c->x, c->y);
    if (insideCentralRegion(tr.pos)) central_seeded = true;
    tracks_.emplace(tr.id, std::move(tr));
  }
  (void)central_seeded;  // central bins participate in the normal rule above

  // Detection frame: refresh reference descriptors and cached locations.
  for (auto& [id, tr] : tracks_) {
    tr.descriptor = BinaryDescriptor::compute(img8, tr.pos.x(), tr.pos.y());
    tr.detection_pos = tr.pos;
    tr.outlier_history.clear();
  }
}

}  // namespace tio
