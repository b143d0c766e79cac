#include "tio/estimator.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "tio/initializer.hpp"

namespace tio {

namespace {

IirFilter baroLowpass(double rate_hz) {
  const double c = 1.0 / std::tan(M_PI * 1.0 / rate_hz);
  const double s2 = std::sqrt(2.0);
  const double a0 = 1.0 + s2 * c + c * c;
  return IirFilter({1.0 / a0, 2.0 / a0, 1.0 / a0},
                   {1.0, 2.0 * (1.0 - c * c) / a0, (1.0 - s2 * c + c * c) / a0});
}

double yawOf(const Rotation3& r) {
  const Mat3 m = r.matrix();
  return std::atan2(m(1, 0), m(0, 0));
}

double nowMs() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

ReplayResult runReplay(const SensorLog& log, const ReplayConfig& cfg) {
  ReplayResult res;
  const auto& tg = cfg.toggles;

  const IirFilter proto = defaultImuPrefilter();
  ImuConditioner conditioner(cfg.decimation, proto.b(), proto.a(), tg.iir);

  BackendParams bp = cfg.backend;
  bp.triangulation_filter = tg.triangulation_filter;
  Backend backend(bp);
  HighRateEkf ekf([&] {
    EkfParams ep;
    ep.imu_noise = bp.imu_noise;
    ep.gravity = bp.gravity;
    return ep;
  }());

  FrontendParams fp = cfg.frontend;
  fp.intrinsics = log.config.intrinsics;
  Frontend frontend(fp);
  frontend.setGradientGateEnabled(tg.gradient_gate);
  frontend.setDescriptorCheckEnabled(tg.orb_check);

  LrfGatedFilter lrf_filter;
  double lrf_last_t = -1.0;
  IirFilter baro_lp = baroLowpass(log.config.baro_rate);
  std::unique_ptr<BaroCorrector> gru_corr;
  if (tg.baro == BaroMode::Gru && cfg.gru) gru_corr = std::make_unique<BaroCorrector>(*cfg.gru);

  // Initialization buffers.
  std::vector<ImuSample> init_imu;
  std::vector<Rotation3> init_att;

  std::optional<BaroMeasurement> latest_baro;
  std::optional<Vec3> latest_att_ref;
  ImuSample last_cond;  // most recent conditioned sample
  bool have_cond = false;
  std::map<int64_t, Eigen::Vector2d> prev_px;
  int nuc_epoch = 0;
  bool prev_frame_valid = true;

  size_t i_frame = 0, i_baro = 0, i_lrf = 0, i_att = 0;

  auto featureVec = [&]() {
    const NavState& x = ekf.initialized() ? ekf.state() : NavState{};
    const Mat3 R = x.pose.rotation().matrix();
    const double roll = std::atan2(R(2, 1), R(2, 2));
    const double pitch = -std::asin(std::clamp(R(2, 0), -1.0, 1.0));
    const Vec3 v_b = R.transpose() * x.velocity;
    // Body acceleration without gravity from the latest conditioned sample.
    Vec3 a_b = Vec3::Zero();
    if (have_cond)
      a_b = R.transpose() * bp.gravity - (last_cond.accel - ekf.bias().accel);
    return baroFeatureVector(roll, pitch, a_b, v_b);
  };

  auto processBaro = [&](const BaroSample& b) {
    const double lp = baro_lp.step(b.altitude);
    if (tg.baro == BaroMode::Off) return;
    BaroMeasurement m;
    m.sigma2 = cfg.baro_sigma2;
    switch (tg.baro) {
      case BaroMode::Filtered:
        m.z_baro = lp;
        break;
      case BaroMode::Poly:
        m.z_baro = b.altitude - (cfg.poly ? cfg.poly->predict(featureVec()) : 0.0);
        break;
      case BaroMode::Mlp: {
        double y = 0.0, lv = 0.0;
        if (cfg.mlp) cfg.mlp->predict(featureVec(), &y, &lv);
        m.z_baro = b.altitude - y;
        m.sigma2 = std::max(0.01, std::exp(lv));
        break;
      }
      case BaroMode::Gru: {
        if (gru_corr) {
          m = gru_corr->compensate(featureVec(), b.altitude);
          m.sigma2 = std::max(0.01, m.sigma2);
        } else {
          m.z_baro = b.altitude;
        }
        break;
      }
      default:
        m.z_baro = b.altitude;
    }
    latest_baro = m;
  };

  for (const auto& raw : log.imu) {
    ImuSample cond;
    if (conditioner.push(raw, cond)) {
      last_cond = cond;
      have_cond = true;
      if (!backend.initialized()) {
        init_imu.push_back(cond);
      } else {
        backend.addImu(cond);
        ekf.propagate(cond);
        TrackPoint tp;
        tp.t = cond.t;
        tp.position = ekf.state().pose.translation();
        tp.velocity = ekf.state().velocity;
        tp.yaw = yawOf(ekf.state().pose.rotation());
        res.ekf_track.push_back(tp);
      }
    }

    // Drain lower-rate streams up to this stamp.
    while (i_baro < log.baro.size() && log.baro[i_baro].t <= raw.t)
      processBaro(log.baro[i_baro++]);
    while (i_lrf < log.lrf.size() && log.lrf[i_lrf].t <= raw.t) {
      const auto& r = log.lrf[i_lrf++];
      const double dt = lrf_last_t < 0.0 ? 0.0 : r.t - lrf_last_t;
      lrf_filter.update(r.range, dt);
      lrf_last_t = r.t;
    }
    while (i_att < log.att.size() && log.att[i_att].t <= raw.t) {
      const double psi = log.att[i_att++].yaw;
      latest_att_ref = Vec3(std::cos(psi), -std::sin(psi), 0.0);
      init_att.push_back(Rotation3::exp(Vec3(0.0, 0.0, psi)));
    }

    while (i_frame < log.frames.size() && log.frames[i_frame].t <= raw.t) {
      const SimFrame& fr = log.frames[i_frame];

      if (!backend.initialized()) {
        if (int(init_imu.size()) >= cfg.init_samples && !init_att.empty()) {
          const InitResult init = initializeStationary(init_imu, init_att,
                                                       cfg.init_bias_weight, 9.81,
                                                       cfg.init_samples);
          double z0 = 0.0;
          if (lrf_filter.initialized())
            z0 = lrf_filter.state()(0);
          else if (latest_baro)
            z0 = latest_baro->z_baro;
          backend.initialize(init, fr.t, Vec3(0.0, 0.0, z0));
          NavState x0;
          x0.pose.rotation() = Rotation3::fromYpr(init.yaw, init.pitch, init.roll);
          x0.pose.translation() = Vec3(0.0, 0.0, z0);
          x0.t = fr.t;
          ekf.initialize(x0, ImuBias{init.gyro_bias, init.accel_bias}, fr.t);
        }
        ++i_frame;
        continue;
      }

      FrameInput in;
      in.t = fr.t;

      std::vector<Observation> obs;
      if (cfg.camera == CameraMode::Bearings) {
        if (fr.valid) obs = fr.obs;
      } else {
        const double t0 = nowMs();
        Image16 img = renderFrame(log.truth[i_frame], log.config, fr.t, nuc_epoch);
        img.valid = fr.valid;
        res.ms_preprocess += nowMs() - t0;
        const double t1 = nowMs();
        const FrameResult fres = frontend.processFrame(img);
        res.ms_frontend += nowMs() - t1;
        if (fres.valid) obs = fres.observations;
      }
      if (!fr.valid && prev_frame_valid) ++nuc_epoch;
      prev_frame_valid = fr.valid;

      // Mean pixel flow over tracks shared with the previous frame.
      double flow = 0.0;
      int nflow = 0;
      std::map<int64_t, Eigen::Vector2d> cur_px;
      for (const auto& o : obs) {
        cur_px[o.feature_id] = o.px;
        auto it = prev_px.find(o.feature_id);
        if (it != prev_px.end()) {
          flow += (o.px - it->second).norm();
          ++nflow;
        }
      }
      prev_px = std::move(cur_px);
      in.flow_px = nflow > 0 ? flow / nflow : 0.0;
      in.observations = std::move(obs);

      if (tg.lrf_prior && lrf_filter.initialized() && lrf_last_t > fr.t - 0.3)
        in.lrf_depth = lrf_filter.state()(0);
      in.baro = latest_baro;
      latest_baro.reset();
      in.attitude_ref = latest_att_ref;

      const double t2 = nowMs();
      const FrameOutput out = backend.addFrame(in);
      res.ms_optimize += nowMs() - t2;
      ++res.frames;
      res.lm_iterations += out.lm_iterations;
      res.total_cost = out.cost;

      if (!out.pose.translation().allFinite() || out.pose.translation().norm() > 1e7)
        throw EstimatorDiverged("state no longer finite at t=" + std::to_string(fr.t));

      NavState xs;
      xs.pose = out.pose;
      xs.velocity = out.velocity;
      ekf.fuse(xs, out.bias, out.frame_id);

      TrackPoint tp;
      tp.t = fr.t;
      tp.position = out.pose.translation();
      tp.velocity = out.velocity;
      tp.yaw = yawOf(out.pose.rotation());
      res.track.push_back(tp);
      if (cfg.on_frame) cfg.on_frame(backend, out);
      ++i_frame;
    }
  }
  return res;
}

MetricsReport computeMetrics(const std::vector<TrackPoint>& estimate,
                             const std::vector<TruthSample>& truth) {
  MetricsReport rep;
  if (estimate.empty() || truth.size() < 2) throw NoOverlap("empty track");
  const double t0 = std::max(estimate.front().t, truth.front().t);
  const double t1 = std::min(estimate.back().t, truth.back().t);
  if (t1 <= t0) throw NoOverlap("tracks do not overlap in time");

  size_t j = 0;
  double sq = 0.0, zsq = 0.0;
  Vec3 last_err = Vec3::Zero();
  for (const auto& e : estimate) {
    if (e.t < t0 || e.t > t1) continue;
    while (j + 2 < truth.size() && truth[j + 1].t < e.t) ++j;
    const double den = truth[j + 1].t - truth[j].t;
    const double a = den > 0.0 ? (e.t - truth[j].t) / den : 0.0;
    const Vec3 p_true = (1.0 - a) * truth[j].position + a * truth[j + 1].position;
    const Vec3 err = e.position - p_true;
    sq += err.squaredNorm();
    zsq += err.z() * err.z();
    last_err = err;
    ++rep.samples;
  }
  if (rep.samples == 0) throw NoOverlap("no estimate samples inside truth span");
  rep.rmse = std::sqrt(sq / double(rep.samples));
  rep.z_rmse = std::sqrt(zsq / double(rep.samples));
  rep.epe = last_err.norm();
  for (size_t k = 1; k < truth.size(); ++k) {
    if (truth[k].t < t0 || truth[k].t > t1) continue;
    rep.path_length += (truth[k].position - truth[k - 1].position).norm();
  }
  rep.drift_pct = rep.path_length > 0.0 ? 100.0 * rep.epe / rep.path_length : 0.0;
  return rep;
}

std::string formatMetrics(const MetricsReport& r, uint64_t seed) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "seed %llu samples %lld rmse %.6f epe %.6f drift_pct %.6f z_rmse %.6f "
                "path %.3f\n",
                (unsigned long long)seed, (long long)r.samples, r.rmse, r.epe, r.drift_pct,
                r.z_rmse, r.path_length);
  return buf;
}

}  // namespace tio
