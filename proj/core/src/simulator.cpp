#include "tio/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tio {

namespace {

struct Rng {
  uint64_t s;
  explicit Rng(uint64_t seed) : s(seed ? seed : 0x9e3779b97f4a7c15ull) {}
  uint64_t next() {
    s ^= s >> 12;
    s ^= s << 25;
    s ^= s >> 27;
    return s * 0x2545f4914f6cdd1dull;
  }
  double uniform() { return double(next() >> 11) * (1.0 / 9007199254740992.0); }
  double gauss() {
    // Box-Muller; draws exactly two uniforms per call for determinism.
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  Vec3 gauss3() { return Vec3(gauss(), gauss(), gauss()); }
};

uint64_t cellHash(int64_t cx, int64_t cy, uint64_t seed) {
  uint64_t h = seed * 0x9e3779b97f4a7c15ull;
  h ^= uint64_t(cx) * 0xff51afd7ed558ccdull;
  h = (h << 31) | (h >> 33);
  h ^= uint64_t(cy) * 0xc4ceb9fe1a85ec53ull;
  h ^= h >> 29;
  return h ? h : 1;
}

struct Landmark {
  int64_t id;
  Vec3 p;
};

/// Deterministic lazy Poisson field on the ground plane: each cell draws
/// its landmarks from a hash-seeded generator, independent of query order.
std::vector<Landmark> cellLandmarks(int64_t cx, int64_t cy, const SensorSuiteConfig& cfg) {
  Rng rng(cellHash(cx, cy, cfg.seed));
  const double mean = cfg.landmark_density * cfg.landmark_cell * cfg.landmark_cell;
  // Knuth's Poisson sampler, capped to keep ids unique within a cell.
  int count = 0;
  double l = std::exp(-mean), p = rng.uniform();
  while (p > l && count < 255) {
    ++count;
    p *= rng.uniform();
  }
  std::vector<Landmark> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    Landmark lm;
    lm.id = int64_t((cellHash(cx, cy, cfg.seed ^ 0xabcdef) & 0x00ffffffffffffffull) << 8) | k;
    lm.p = Vec3((double(cx) + rng.uniform()) * cfg.landmark_cell,
                (double(cy) + rng.uniform()) * cfg.landmark_cell, 0.0);
    out.push_back(lm);
  }
  return out;
}

Mat3 nadirCamRotation() {
  Mat3 r;
  r << 1, 0, 0, 0, -1, 0, 0, 0, -1;  // body FLU -> camera looking down
  return r;
}

}  // namespace

void FfcScheduler::request(double t) {
  if (!pending_) {
    pending_ = true;
    request_t_ = t;
  }
}

bool FfcScheduler::update(double t, double v, double omega) {
  if (t < dropout_end_) return true;
  if (pending_) {
    const bool calm = v < p_.v_max && omega < p_.omega_max;
    const bool forced = t - request_t_ >= p_.max_defer;
    if (calm || forced) {
      pending_ = false;
      dropout_end_ = t + p_.dropout_duration;
      return true;
    }
  }
  return false;
}

SensorLog simulate(const TrajectorySpec& spec, const SensorSuiteConfig& cfg) {
  SensorLog log;
  log.spec = spec;
  log.config = cfg;
  const auto truth = generateTruth(spec, cfg.imu_rate);
  const double dt = 1.0 / cfg.imu_rate;
  const Vec3 g_w(0.0, 0.0, -9.81);

  Rng imu_rng(cfg.seed ^ 0x11);
  Rng baro_rng(cfg.seed ^ 0x22);
  Rng lrf_rng(cfg.seed ^ 0x33);
  Rng att_rng(cfg.seed ^ 0x44);
  Rng px_rng(cfg.seed ^ 0x55);

  Vec3 bg = cfg.gyro_bias0, ba = cfg.accel_bias0;
  std::vector<double> phases;
  for (size_t k = 0; k < cfg.vibration.size(); ++k)
    phases.push_back(2.0 * M_PI * imu_rng.uniform());

  const int imu_per_frame = std::max(1, int(std::lround(cfg.imu_rate / cfg.frame_rate)));
  const int imu_per_baro = std::max(1, int(std::lround(cfg.imu_rate / cfg.baro_rate)));
  const int imu_per_lrf = std::max(1, int(std::lround(cfg.imu_rate / cfg.lrf_rate)));
  const int imu_per_att = std::max(1, int(std::lround(cfg.imu_rate / cfg.att_rate)));

  double sppe = 0.0;            // lagged pressure offset, m
  double baro_colored = 0.0;    // AR(1) noise state
  double yaw_bias = 0.0;

  FfcScheduler ffc({cfg.ffc_v_max, cfg.ffc_omega_max, cfg.ffc_max_defer, cfg.ffc_dropout});
  ffc.request(0.0);  // forced pre-takeoff NUC
  double next_ffc_request = cfg.ffc_interval;

  const double half_fov = std::max(std::atan(cfg.intrinsics.cx / cfg.intrinsics.fx),
                                   std::atan(cfg.intrinsics.cy / cfg.intrinsics.fy));
  const Mat3 R_bc = nadirCamRotation();

  for (size_t i = 0; i < truth.size(); ++i) {
    const TruthSample& ts = truth[i];
    const Mat3 R = ts.rotation().matrix();

    // --- IMU at full rate ---
    const double speed_scale =
        cfg.vibration_floor +
        (1.0 - cfg.vibration_floor) * std::min(1.0, ts.velocity.norm() / cfg.vibration_ref_speed);
    Vec3 vib_a = Vec3::Zero(), vib_g = Vec3::Zero();
    for (size_t k = 0; k < cfg.vibration.size(); ++k) {
      const double sa = std::sin(2.0 * M_PI * cfg.vibration[k].freq_hz * ts.t + phases[k]);
      vib_a += speed_scale * cfg.vibration[k].accel_amp * sa * Vec3(1.0, 0.8, 1.2);
      vib_g += speed_scale * cfg.vibration[k].gyro_amp * sa * Vec3(0.7, 1.0, 0.5);
    }
    ImuSample s;
    s.t = ts.t;
    s.gyro = Vec3(0.0, 0.0, ts.yaw_rate) + bg + vib_g +
             cfg.sigma_g * std::sqrt(cfg.imu_rate) * imu_rng.gauss3();
    s.accel = R.transpose() * (g_w - ts.accel) + ba + vib_a +
              cfg.sigma_a * std::sqrt(cfg.imu_rate) * imu_rng.gauss3();
    log.imu.push_back(s);
    bg += cfg.sigma_bg_walk * std::sqrt(dt) * imu_rng.gauss3();
    ba += cfg.sigma_ba_walk * std::sqrt(dt) * imu_rng.gauss3();

    // --- barometer ---
    const Vec3 v_b = R.transpose() * ts.velocity;
    const Vec3 a_b = R.transpose() * ts.accel;
    const double sppe_target =
        cfg.sppe_k1 * v_b.squaredNorm() + cfg.sppe_k2 * a_b.x();
    sppe += (sppe_target - sppe) * dt / cfg.sppe_tau;
    if (i % imu_per_baro == 0) {
      baro_colored = cfg.baro_colored_alpha * baro_colored +
                     cfg.baro_colored_sigma * std::sqrt(1.0 - cfg.baro_colored_alpha *
                                                                  cfg.baro_colored_alpha) *
                         baro_rng.gauss();
      BaroSample b;
      b.t = ts.t;
      b.altitude = ts.position.z() + sppe + baro_colored + cfg.baro_sigma * baro_rng.gauss();
      log.baro.push_back(b);
    }

    // --- LRF ---
    if (i % imu_per_lrf == 0) {
      LrfRecord r;
      r.t = ts.t;
      // Slant range of the nadir beam: altitude stretched by vehicle tilt.
      const double cos_tilt = std::max(0.2, R(2, 2));
      r.range = ts.position.z() / cos_tilt + cfg.lrf_sigma * lrf_rng.gauss();
      if (lrf_rng.uniform() < cfg.lrf_spike_prob)
        r.range += cfg.lrf_spike_mag * (0.5 + lrf_rng.uniform());
      log.lrf.push_back(r);
    }

    // --- heading reference ---
    if (i % imu_per_att == 0) {
      yaw_bias += cfg.att_yaw_bias_walk * att_rng.gauss();
      yaw_bias = std::clamp(yaw_bias, -cfg.att_yaw_bias_max, cfg.att_yaw_bias_max);
      AttRecord a;
      a.t = ts.t;
      a.yaw = ts.yaw + yaw_bias + cfg.att_yaw_sigma * att_rng.gauss();
      log.att.push_back(a);
    }

    // --- camera frames ---
    if (i % imu_per_frame == 0) {
      if (ts.t >= next_ffc_request) {
        ffc.request(ts.t);
        next_ffc_request += cfg.ffc_interval;
      }
      const bool blanked = ffc.update(ts.t, ts.velocity.norm(), std::abs(ts.yaw_rate));

      SimFrame f;
      f.t = ts.t;
      f.valid = !blanked;
      if (f.valid) {
        const Mat3 R_wc = R * R_bc;
        const Vec3 c = ts.position;
        const double radius = c.z() * std::tan(half_fov) * 1.3 + cfg.landmark_cell;
        const int64_t cx0 = int64_t(std::floor((c.x() - radius) / cfg.landmark_cell));
        const int64_t cx1 = int64_t(std::floor((c.x() + radius) / cfg.landmark_cell));
        const int64_t cy0 = int64_t(std::floor((c.y() - radius) / cfg.landmark_cell));
        const int64_t cy1 = int64_t(std::floor((c.y() + radius) / cfg.landmark_cell));
        for (int64_t cy = cy0; cy <= cy1; ++cy)
          for (int64_t cx = cx0; cx <= cx1; ++cx)
            for (const auto& lm : cellLandmarks(cx, cy, cfg)) {
              const Vec3 p_c = R_wc.transpose() * (lm.p - c);
              if (p_c.z() < 1.0) continue;
              Eigen::Vector2d px = cfg.intrinsics.project(p_c);
              px.x() += cfg.px_noise * px_rng.gauss();
              px.y() += cfg.px_noise * px_rng.gauss();
              if (px.x() < 0.0 || px.x() >= cfg.image_width || px.y() < 0.0 ||
                  px.y() >= cfg.image_height)
                continue;
              Observation ob;
              ob.feature_id = lm.id;
              ob.px = px;
              ob.bearing = cfg.intrinsics.bearing(px.x(), px.y());
              f.obs.push_back(ob);
            }
        std::sort(f.obs.begin(), f.obs.end(),
                  [](const Observation& a, const Observation& b) {
                    return a.feature_id < b.feature_id;
                  });
        if (int(f.obs.size()) > cfg.max_obs_per_frame) f.obs.resize(cfg.max_obs_per_frame);
      }
      log.frames.push_back(std::move(f));
      log.truth.push_back(ts);
    }
  }
  return log;
}

BaroLog simulateBaroLog(const std::vector<TruthSample>& truth, const SensorSuiteConfig& cfg,
                        double rate_hz) {
  BaroLog out;
  if (truth.empty()) return out;
  const double src_rate = truth.size() > 1 ? 1.0 / (truth[1].t - truth[0].t) : 1.0;
  const int stride = std::max(1, int(std::lround(src_rate / rate_hz)));
  const double dt = stride / src_rate;

  Rng rng(cfg.seed ^ 0x66);
  double sppe = 0.0, colored = 0.0;
  for (size_t i = 0; i < truth.size(); i += stride) {
    const TruthSample& ts = truth[i];
    const Mat3 R = ts.rotation().matrix();
    const Vec3 v_b = R.transpose() * ts.velocity;
    const Vec3 a_b = R.transpose() * ts.accel;
    const double target = cfg.sppe_k1 * v_b.squaredNorm() + cfg.sppe_k2 * a_b.x();
    sppe += (target - sppe) * dt / cfg.sppe_tau;
    colored = cfg.baro_colored_alpha * colored +
              cfg.baro_colored_sigma *
                  std::sqrt(1.0 - cfg.baro_colored_alpha * cfg.baro_colored_alpha) * rng.gauss();
    BaroRecord r;
    r.t = ts.t;
    r.features = baroFeatureVector(0.0, 0.0, a_b, v_b);
    r.raw_baro = ts.position.z() + sppe + colored + cfg.baro_sigma * rng.gauss();
    r.truth_altitude = ts.position.z();
    out.push_back(r);
  }
  return out;
}

Image16 renderFrame(const TruthSample& state, const SensorSuiteConfig& cfg, double t,
                    int nuc_epoch) {
  Image16 img(cfg.image_width, cfg.image_height, 6000);
  img.t = t;
  const Mat3 R_wc = state.rotation().matrix() * nadirCamRotation();
  const Vec3 c = state.position;
  const double half_fov = std::max(std::atan(cfg.intrinsics.cx / cfg.intrinsics.fx),
                                   std::atan(cfg.intrinsics.cy / cfg.intrinsics.fy));
  const double radius = c.z() * std::tan(half_fov) * 1.3 + cfg.landmark_cell;
  const int64_t cx0 = int64_t(std::floor((c.x() - radius) / cfg.landmark_cell));
  const int64_t cx1 = int64_t(std::floor((c.x() + radius) / cfg.landmark_cell));
  const int64_t cy0 = int64_t(std::floor((c.y() - radius) / cfg.landmark_cell));
  const int64_t cy1 = int64_t(std::floor((c.y() + radius) / cfg.landmark_cell));

  // Fixed-pattern cross-hatch plus a per-NUC-epoch pedestal shift.
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      int v = 6000 + 40 * ((x % 16 == 0) + (y % 16 == 0)) + 120 * (nuc_epoch % 5);
      v += int(30.0 * std::sin(0.37 * x) * std::sin(0.41 * y));
      img.at(x, y) = uint16_t(std::clamp(v, 0, 65535));
    }

  for (int64_t cy = cy0; cy <= cy1; ++cy)
    for (int64_t cx = cx0; cx <= cx1; ++cx)
      for (const auto& lm : cellLandmarks(cx, cy, cfg)) {
        const Vec3 p_c = R_wc.transpose() * (lm.p - c);
        if (p_c.z() < 1.0) continue;
        const Eigen::Vector2d px = cfg.intrinsics.project(p_c);
        // Per-landmark deterministic intensity/size.
        Rng lr(uint64_t(lm.id));
        const double amp = 8000.0 + 16000.0 * lr.uniform();
        const double sigma = 1.2 + 1.3 * lr.uniform();
        const int rad = int(3.0 * sigma) + 1;
        for (int dy = -rad; dy <= rad; ++dy)
          for (int dx = -rad; dx <= rad; ++dx) {
            const int ix = int(std::lround(px.x())) + dx;
            const int iy = int(std::lround(px.y())) + dy;
            if (!img.inBounds(ix, iy)) continue;
            const double dd = (ix - px.x()) * (ix - px.x()) + (iy - px.y()) * (iy - px.y());
            const int add = int(amp * std::exp(-0.5 * dd / (sigma * sigma)));
            img.at(ix, iy) = uint16_t(std::min(65535, int(img.at(ix, iy)) + add));
          }
      }
  return img;
}

// ---------------------------------------------------------------------------
// Log serialization: one stream per file, line-delimited, plus a manifest.

namespace fs = std::filesystem;

void saveSensorLog(const std::string& dir, const SensorLog& log) {
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(fs::path(dir) / name);
    if (!f) throw std::runtime_error(std::string("cannot write ") + name + " in " + dir);
    f.precision(15);
    return f;
  };
  {
    auto f = open("imu.txt");
    for (const auto& s : log.imu)
      f << s.t << ' ' << s.gyro.x() << ' ' << s.gyro.y() << ' ' << s.gyro.z() << ' '
        << s.accel.x() << ' ' << s.accel.y() << ' ' << s.accel.z() << '\n';
  }
  {
    auto f = open("frames.txt");
    for (const auto& fr : log.frames) {
      f << fr.t << ' ' << int(fr.valid) << ' ' << fr.obs.size();
      for (const auto& o : fr.obs)
        f << ' ' << o.feature_id << ' ' << o.px.x() << ' ' << o.px.y() << ' ' << o.bearing.x()
          << ' ' << o.bearing.y() << ' ' << o.bearing.z();
      f << '\n';
    }
  }
  {
    auto f = open("baro.txt");
    for (const auto& b : log.baro) f << b.t << ' ' << b.altitude << '\n';
  }
  {
    auto f = open("lrf.txt");
    for (const auto& r : log.lrf) f << r.t << ' ' << r.range << '\n';
  }
  {
    auto f = open("att.txt");
    for (const auto& a : log.att) f << a.t << ' ' << a.yaw << '\n';
  }
  {
    auto f = open("truth.txt");
    for (const auto& ts : log.truth)
      f << ts.t << ' ' << ts.position.x() << ' ' << ts.position.y() << ' ' << ts.position.z()
        << ' ' << ts.velocity.x() << ' ' << ts.velocity.y() << ' ' << ts.velocity.z() << ' '
        << ts.yaw << ' ' << ts.yaw_rate << '\n';
  }
  {
    auto f = open("manifest.txt");
    f << "seed " << log.config.seed << '\n'
      << "kind " << int(log.spec.kind) << '\n'
      << "cruise_speed " << log.spec.cruise_speed << '\n'
      << "altitude " << log.spec.altitude << '\n'
      << "path_length " << log.spec.path_length << '\n'
      << "imu_rate " << log.config.imu_rate << '\n'
      << "frame_rate " << log.config.frame_rate << '\n';
  }
}

struct MalformedLog : std::runtime_error {
  using std::runtime_error::runtime_error;
};

SensorLog loadSensorLog(const std::string& dir) {
  SensorLog log;
  auto lines = [&](const char* name, auto&& fn) {
    std::ifstream f(fs::path(dir) / name);
    if (!f) throw std::runtime_error(std::string("cannot open ") + name + " in " + dir);
    std::string line;
    int64_t ln = 0;
    while (std::getline(f, line)) {
      ++ln;
      if (line.empty()) continue;
      std::istringstream ss(line);
      fn(ss);
      if (ss.fail())
        throw MalformedLog(std::string(name) + ":" + std::to_string(ln) + ": malformed record");
    }
  };
  lines("imu.txt", [&](std::istringstream& ss) {
    ImuSample s;
    ss >> s.t >> s.gyro.x() >> s.gyro.y() >> s.gyro.z() >> s.accel.x() >> s.accel.y() >>
        s.accel.z();
    log.imu.push_back(s);
  });
  lines("frames.txt", [&](std::istringstream& ss) {
    SimFrame fr;
    int valid = 1;
    size_t n = 0;
    ss >> fr.t >> valid >> n;
    fr.valid = valid != 0;
    for (size_t k = 0; k < n; ++k) {
      Observation o;
      ss >> o.feature_id >> o.px.x() >> o.px.y() >> o.bearing.x() >> o.bearing.y() >>
          o.bearing.z();
      fr.obs.push_back(o);
    }
    log.frames.push_back(std::move(fr));
  });
  lines("baro.txt", [&](std::istringstream& ss) {
    BaroSample b;
    ss >> b.t >> b.altitude;
    log.baro.push_back(b);
  });
  lines("lrf.txt", [&](std::istringstream& ss) {
    LrfRecord r;
    ss >> r.t >> r.range;
    log.lrf.push_back(r);
  });
  lines("att.txt", [&](std::istringstream& ss) {
    AttRecord a;
    ss >> a.t >> a.yaw;
    log.att.push_back(a);
  });
  lines("truth.txt", [&](std::istringstream& ss) {
    TruthSample ts;
    ss >> ts.t >> ts.position.x() >> ts.position.y() >> ts.position.z() >> ts.velocity.x() >>
        ts.velocity.y() >> ts.velocity.z() >> ts.yaw >> ts.yaw_rate;
    log.truth.push_back(ts);
  });
  return log;
}

}  // namespace tio
