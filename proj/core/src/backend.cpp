#include "tio/backend.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>

namespace tio {

namespace {

Eigen::VectorXd biasVec(const ImuBias& b) {
  Eigen::VectorXd v(6);
  v << b.gyro, b.accel;
  return v;
}

// Local coordinates of `cur` relative to `lin`: [Log(R_lin^-1 R), dp, dv].
Eigen::Matrix<double, 9, 1> navDelta(const NavState& cur, const NavState& lin) {
  Eigen::Matrix<double, 9, 1> d;
  d.head<3>() = (lin.pose.rotation().inverse() * cur.pose.rotation()).log();
  d.segment<3>(3) = cur.pose.translation() - lin.pose.translation();
  d.tail<3>() = cur.velocity - lin.velocity;
  return d;
}

// Columns (d_theta, d_v, d_p) -> (d_theta, d_p, d_v).
Eigen::Matrix<double, 9, 9> permutePreint(const Eigen::Matrix<double, 9, 9>& j) {
  Eigen::Matrix<double, 9, 9> out;
  out.middleCols<3>(0) = j.middleCols<3>(0);
  out.middleCols<3>(3) = j.middleCols<3>(6);
  out.middleCols<3>(6) = j.middleCols<3>(3);
  return out;
}

Eigen::MatrixXd matrixSqrtSym(const Eigen::MatrixXd& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Backend::Backend(const BackendParams& params) : p_(params) {}

int Backend::numKeyframes() const { return int(keyframes_.size()); }

void Backend::initialize(const InitResult& init, double t, const Vec3& position) {
  NavState x;
  x.pose.rotation() = Rotation3::fromYpr(init.yaw, init.pitch, init.roll);
  x.pose.translation() = position;
  x.velocity.setZero();
  x.bias = ImuBias{init.gyro_bias, init.accel_bias};
  x.t = t;
  x.is_keyframe = true;
  x.parent_keyframe = 0;

  Frame f;
  f.id = next_frame_id_++;
  f.x = x;
  frames_[f.id] = f;
  keyframes_.push_back(f.id);
  frames_since_keyframe_ = 0;
  running_bias_ = *x.bias;
  running_pim_.emplace(running_bias_, p_.imu_noise);

  // Gauge + stationary prior on the first keyframe, plus the initial
  // barometer datum offset.
  StatePriorG prior;
  prior.frame = f.id;
  prior.has_bias = true;
  prior.has_baro_offset = true;
  Eigen::VectorXd diag(16);
  diag << p_.prior_rp_info, p_.prior_rp_info, p_.prior_yaw_info,          // rotation
      p_.prior_pos_info, p_.prior_pos_info, p_.prior_pos_info,            // position
      p_.prior_vel_info, p_.prior_vel_info, p_.prior_vel_info,            // velocity
      Eigen::VectorXd::Constant(6, p_.prior_bias_info),                   // bias
      1.0 / (p_.baro_offset_prior_sigma * p_.baro_offset_prior_sigma);    // datum
  prior.H = diag.asDiagonal();
  prior.sqrtH = diag.cwiseSqrt().asDiagonal();
  prior.mu = Eigen::VectorXd::Zero(16);
  prior.lin = x;
  prior.bias_lin = *x.bias;
  prior.baro_offset_lin = baro_offset_b_;
  state_priors_.push_back(std::move(prior));

  lin_points_[f.id] = x;
  dirty_frames_.insert(f.id);
  structure_dirty_ = true;
  last_imu_t_ = t;
  initialized_ = true;
}

void Backend::addImu(const ImuSample& s) {
  if (!initialized_) return;
  const double dt = last_imu_t_ < 0.0 ? 0.0 : s.t - last_imu_t_;
  if (dt > 0.0 && running_pim_) running_pim_->add(s, dt, running_bias_);
  last_imu_t_ = s.t;

  zv_buffer_.push_back(s);
  while (!zv_buffer_.empty() && zv_buffer_.front().t < s.t - p_.zv_window)
    zv_buffer_.pop_front();
}

MotionClass Backend::classifyMotion(double flow_px) const {
  if (zv_buffer_.size() < 10) return MotionClass::None;
  if (zv_buffer_.back().t - zv_buffer_.front().t < 0.9 * p_.zv_window) return MotionClass::None;
  Vec3 a_mean = Vec3::Zero(), g_mean = Vec3::Zero();
  for (const auto& s : zv_buffer_) {
    a_mean += s.accel;
    g_mean += s.gyro;
  }
  const double n = double(zv_buffer_.size());
  a_mean /= n;
  g_mean /= n;
  double a_var = 0.0, g_var = 0.0;
  for (const auto& s : zv_buffer_) {
    a_var += (s.accel - a_mean).squaredNorm();
    g_var += (s.gyro - g_mean).squaredNorm();
  }
  const double a_std = std::sqrt(a_var / n);
  const double g_std = std::sqrt(g_var / n);
  if (a_std > p_.zv_accel_std || g_std > p_.zv_gyro_std) return MotionClass::None;
  if (flow_px < p_.zv_flow_px) return MotionClass::ZeroVelocity;
  return MotionClass::ConstantVelocity;
}

Pose3 Backend::cameraPose(int64_t frame_id) const {
  return frames_.at(frame_id).x.pose * p_.T_bc;
}

FrameOutput Backend::addFrame(const FrameInput& in) {
  FrameOutput out;
  if (!initialized_) return out;

  const Frame& prev = frames_.rbegin()->second;
  const int64_t prev_id = prev.id;

  // New state predicted from the closed preintegration.
  NavState x;
  x.t = in.t;
  {
    const PreintegratedImu& pim = *running_pim_;
    const Rotation3 Ri = prev.x.pose.rotation();
    const double dt = pim.deltaT();
    x.pose.rotation() = Ri * pim.deltaRotCorrected(running_bias_);
    x.velocity = prev.x.velocity + p_.gravity * dt + Ri * pim.deltaVelCorrected(running_bias_);
    x.pose.translation() = prev.x.pose.translation() + prev.x.velocity * dt +
                           0.5 * p_.gravity * dt * dt + Ri * pim.deltaPosCorrected(running_bias_);
  }

  ++frames_since_keyframe_;
  const bool make_keyframe = frames_since_keyframe_ >= p_.keyframe_interval;
  x.is_keyframe = make_keyframe;
  x.parent_keyframe = keyframes_.back();
  if (make_keyframe) {
    x.bias = running_bias_;
    frames_since_keyframe_ = 0;
  }

  Frame f;
  f.id = next_frame_id_++;
  f.x = x;
  frames_[f.id] = f;

  PreintFactorG pf;
  pf.i = prev_id;
  pf.j = f.id;
  pf.bias_kf = prev.x.is_keyframe && prev.x.bias ? prev_id : prev.x.parent_keyframe;
  pf.pim = *running_pim_;
  preint_factors_.push_back(std::move(pf));

  if (make_keyframe) {
    const int64_t prev_kf = keyframes_.back();
    keyframes_.push_back(f.id);
    f.x.parent_keyframe = f.id;
    frames_[f.id].x.parent_keyframe = f.id;
    BiasWalkG bw;
    bw.kf_i = prev_kf;
    bw.kf_j = f.id;
    bw.dt = std::max(p_.bias_walk_dt_floor, x.t - frames_.at(prev_kf).x.t);
    bias_walks_.push_back(bw);
  }

  // Per-frame measurement factors.
  if (in.baro) baro_factors_.push_back({f.id, *in.baro, {}});
  if (in.attitude_ref) att_factors_.push_back({f.id, *in.attitude_ref, {}});
  out.motion = classifyMotion(in.flow_px);
  if (out.motion != MotionClass::None && !zv_buffer_.empty()) {
    Vec3 a_mean = Vec3::Zero();
    for (const auto& s : zv_buffer_) a_mean += s.accel - running_bias_.accel;
    GravAttFactorG g;
    g.frame = f.id;
    g.accel_dir = a_mean.normalized();
    grav_att_factors_.push_back(std::move(g));
    if (out.motion == MotionClass::ZeroVelocity) zupt_factors_.push_back({f.id, {}});
  }

  manageCandidates(in, f.id, make_keyframe);

  lin_points_[f.id] = frames_.at(f.id).x;
  dirty_frames_.insert(f.id);
  structure_dirty_ = true;

  const SolveStats stats = optimize();

  if (make_keyframe && int(keyframes_.size()) > p_.lag_keyframes) marginalizeOldest();

  // Keyframe biases feed the next preintegration group.
  running_bias_ = *frames_.at(keyframes_.back()).x.bias;
  running_pim_.emplace(running_bias_, p_.imu_noise);

  const NavState& xs = frames_.at(f.id).x;
  out.frame_id = f.id;
  out.t = in.t;
  out.pose = xs.pose;
  out.velocity = xs.velocity;
  out.bias = running_bias_;
  out.baro_offset = baro_offset_b_;
  out.lm_iterations = stats.lm_iterations;
  out.ms_assemble = stats.ms_assemble;
  out.ms_solve = stats.ms_solve;
  out.ms_cost = stats.ms_cost;
  out.relinearized = stats.relinearized_vars;
  out.cost = stats.cost;
  return out;
}

void Backend::manageCandidates(const FrameInput& in, int64_t frame_id, bool is_keyframe) {
  const bool central_scale = true;
  // Route observations: admitted features gain factors on keyframes only
  // (intermediate frames ride the preintegration chain); unknown ids grow
  // candidate tracks at full frame rate.
  std::vector<std::pair<int64_t, Vec3>> central_lrf_obs;
  const auto is_central = [](const Vec3& b) {
    return std::abs(b.x() / b.z()) < 0.15 && std::abs(b.y() / b.z()) < 0.15;
  };
  for (const auto& obs : in.observations) {
    auto fit = features_.find(obs.feature_id);
    if (fit != features_.end()) {
      if (is_keyframe && fit->second.state.root_keyframe != frame_id) {
        fit->second.obs.push_back({obs.feature_id, frame_id, obs.bearing, {}});
        structure_dirty_ = true;
        // A central bearing coincides with the rangefinder spot; revisit the
        // feature with a fresh absolute-depth prior below once poses exist.
        if (is_central(obs.bearing) && in.lrf_depth && *in.lrf_depth > 0.0)
          central_lrf_obs.emplace_back(obs.feature_id, obs.bearing);
      }
      continue;
    }
    auto& c = candidates_[obs.feature_id];
    if (c.id < 0) {
      c.id = obs.feature_id;
      c.first_t = in.t;
      const Vec3 b = obs.bearing;
      c.in_central_region = is_central(b);
    }
    c.frame_ids.push_back(frame_id);
    c.bearings.push_back(obs.bearing);
    c.last_obs_t = in.t;
  }

  // Build the pose snapshot once; drop candidate observations whose frames
  // already slid out of the window.
  PoseMap cam_poses;
  for (const auto& [id, fr] : frames_) cam_poses[id] = fr.x.pose * p_.T_bc;

  // Rangefinder range at the current frame mapped into an inverse-depth
  // prior expressed in a feature's root camera. First-order propagation of
  // the range noise gives sigma_rho = sigma_d * rho^2.
  const auto lrf_rho_prior = [&](const Pose3& cam_root, const Vec3& s_root,
                                 const Vec3& b_obs)
      -> std::optional<std::pair<double, double>> {
    if (!in.lrf_depth || *in.lrf_depth <= 0.0) return std::nullopt;
    if (!cam_poses.count(frame_id) || b_obs.z() <= 0.0) return std::nullopt;
    const Vec3 p_obs = b_obs * (*in.lrf_depth / b_obs.z());
    const Vec3 p_root = (cam_root.inverse() * cam_poses.at(frame_id)) * p_obs;
    const double depth = s_root.dot(p_root);
    if (depth < 1.0) return std::nullopt;
    const double rho = 1.0 / depth;
    return std::make_pair(rho, p_.depth_prior_sigma * rho * rho);
  };
  for (const auto& [fid, b] : central_lrf_obs) {
    const auto& st = features_.at(fid).state;
    const auto rit = frames_.find(st.root_keyframe);
    if (rit == frames_.end()) continue;
    const Pose3 cam_root = rit->second.x.pose * st.root_shift * p_.T_bc;
    if (const auto pr = lrf_rho_prior(cam_root, st.s, b)) {
      depth_priors_.push_back({fid, pr->first, pr->second, {}});
      structure_dirty_ = true;
    }
  }

  std::vector<FeatureCandidate> batch;
  std::vector<int64_t> rejected;
  for (auto& [cid, c] : candidates_) {
    size_t keep = 0;
    for (size_t k = 0; k < c.frame_ids.size(); ++k) {
      if (cam_poses.count(c.frame_ids[k])) {
        c.frame_ids[keep] = c.frame_ids[k];
        c.bearings[keep] = c.bearings[k];
        ++keep;
      }
    }
    c.frame_ids.resize(keep);
    c.bearings.resize(keep);
    if (keep == 0) {
      if (in.t - c.last_obs_t > 2.0 * p_.filter.stale_timeout) rejected.push_back(cid);
      continue;
    }

    const bool ripe = int(c.bearings.size()) >= p_.filter.min_observations;
    const bool stale = in.t - c.last_obs_t >= p_.filter.stale_timeout &&
                       int(c.bearings.size()) >= 2;
    // Low-parallax tracks (hover) never go stale; age them out instead so
    // they can still enter with a nominal depth.
    const bool aged = ripe && in.t - c.first_t >= 2.0 * p_.filter.stale_timeout;
    if (!ripe && !stale) continue;

    if (!p_.triangulation_filter) {
      // Ablation path: no triangulation gate, nominal depth for everyone.
      c.point_root.reset();
      c.quality = 0.0;
      c.fallback = true;
      c.status = CandidateStatus::Verified;
      batch.push_back(c);
      continue;
    }

    try {
      const auto tri = triangulateRansac(c, cam_poses, p_.filter);
      c.point_root = tri.point_root;
      c.quality = qualityScore(c, cam_poses);
      c.fallback = false;
      const double lrf = in.lrf_depth.value_or(-1.0);
      if (!lrfDepthConsistency(c, tri.depth, lrf, p_.filter)) {
        rejected.push_back(cid);
        continue;
      }
      c.status = CandidateStatus::Verified;
    } catch (const NegativeDepth&) {
      rejected.push_back(cid);
      continue;
    } catch (const InsufficientParallax&) {
      if (!stale && !aged) continue;  // wait for more parallax until the timeout
      c.point_root.reset();
      c.quality = qualityScore(c, cam_poses);
      c.fallback = true;
      c.status = CandidateStatus::Verified;
    }
    batch.push_back(c);
  }
  for (int64_t cid : rejected) candidates_.erase(cid);

  if (!batch.empty()) {
    const auto admitted = admitBatch(batch, cam_poses, p_.filter);
    // Propagate statuses back and instantiate admitted features.
    for (const auto& c : batch) {
      if (c.status == CandidateStatus::Rejected) {
        candidates_.erase(c.id);
        continue;
      }
      if (std::find(admitted.begin(), admitted.end(), c.id) == admitted.end()) continue;

      // Root at the first keyframe observation: keyframe-rooted features
      // keep the reduced system's keyframe-coupled sparsity, which the
      // solver depends on for bounded per-frame cost.
      int root_idx = -1;
      for (size_t k = 0; k < c.frame_ids.size(); ++k) {
        const auto fit = frames_.find(c.frame_ids[k]);
        if (fit != frames_.end() && fit->second.x.is_keyframe) {
          root_idx = int(k);
          break;
        }
      }
      if (root_idx < 0) continue;  // wait for a keyframe observation

      Track tr;
      tr.state.id = c.id;
      tr.state.root_keyframe = c.frame_ids[root_idx];
      tr.state.s = c.bearings[root_idx];
      tr.state.root_shift = Pose3::identity();
      if (c.point_root) {
        // Triangulation is expressed in the first observation's camera;
        // move it into the root keyframe's camera for the depth seed.
        const Vec3 p_root = (cam_poses.at(c.frame_ids[root_idx]).inverse() *
                             cam_poses.at(c.frame_ids.front())) *
                            (*c.point_root);
        tr.state.rho = 1.0 / std::max(1e-3, tr.state.s.dot(p_root));
      } else if (in.lrf_depth && *in.lrf_depth > 0.0) {
        // Nadir geometry: the rangefinder range approximates scene depth far
        // better than the static nominal seed.
        tr.state.rho = 1.0 / std::max(1.0, *in.lrf_depth);
      } else {
        tr.state.rho = p_.nominal_rho;
      }
      for (size_t k = size_t(root_idx) + 1; k < c.frame_ids.size(); ++k) {
        const auto fit = frames_.find(c.frame_ids[k]);
        if (fit == frames_.end() || !fit->second.x.is_keyframe) continue;
        tr.obs.push_back({c.id, c.frame_ids[k], c.bearings[k], {}});
      }
      // Anchor absolute scale when the newest bearing lies under the
      // rangefinder spot at the current frame.
      if (central_scale && c.frame_ids.back() == frame_id &&
          is_central(c.bearings.back())) {
        const Pose3 cam_root = cam_poses.at(tr.state.root_keyframe);
        if (const auto pr = lrf_rho_prior(cam_root, tr.state.s, c.bearings.back())) {
          if (c.fallback) tr.state.rho = pr->first;
          depth_priors_.push_back({c.id, pr->first, pr->second, {}});
        }
      }
      features_[c.id] = std::move(tr);
      lin_rho_[c.id] = features_[c.id].state.rho;
      dirty_features_.insert(c.id);
      candidates_.erase(c.id);
      structure_dirty_ = true;
    }
  }
}

Backend::Layout Backend::makeLayout() const {
  Layout lay;
  int off = 0;
  for (const auto& [id, fr] : frames_) {
    lay.frame_offset[id] = off;
    off += 9;
    lay.block_sizes.push_back(9);
    if (fr.x.is_keyframe && fr.x.bias) {
      lay.bias_offset[id] = off;
      off += 6;
      lay.block_sizes.push_back(6);
    }
  }
  lay.baro_offset_index = off;
  off += 1;
  lay.block_sizes.push_back(1);
  lay.nav_dim = off;
  for (const auto& [fid, tr] : features_) {
    lay.feature_index[fid] = int(lay.feature_order.size());
    lay.feature_order.push_back(fid);
  }
  return lay;
}

int Backend::markRelinearization() {
  int marked = 0;
  for (auto& [id, fr] : frames_) {
    auto it = lin_points_.find(id);
    if (it == lin_points_.end()) {
      lin_points_[id] = fr.x;
      dirty_frames_.insert(id);
      ++marked;
      continue;
    }
    const auto d = navDelta(fr.x, it->second);
    bool mark = d.head<3>().norm() > p_.relin_rot || d.segment<3>(3).norm() > p_.relin_trans ||
                d.tail<3>().norm() > p_.relin_trans;
    if (!mark && fr.x.is_keyframe && fr.x.bias && it->second.bias)
      mark = (biasVec(*fr.x.bias) - biasVec(*it->second.bias)).norm() > p_.relin_rho;
    if (mark) {
      it->second = fr.x;
      dirty_frames_.insert(id);
      ++marked;
    }
  }
  for (auto& [id, tr] : features_) {
    auto it = lin_rho_.find(id);
    if (it == lin_rho_.end() || std::abs(tr.state.rho - it->second) > p_.relin_rho) {
      lin_rho_[id] = tr.state.rho;
      dirty_features_.insert(id);
      ++marked;
    }
  }
  return marked;
}

// ---------------------------------------------------------------------------
// Linearization helpers. Each produces whitened blocks keyed by variable.

double Backend::evaluateCost() const {
  double cost = 0.0;
  const Vec3 g = p_.gravity;

  for (const auto& fct : preint_factors_) {
    const NavState& xi = frames_.at(fct.i).x;
    const NavState& xj = frames_.at(fct.j).x;
    const ImuBias& b = *frames_.at(fct.bias_kf).x.bias;
    const Vec9 r = fct.pim.residual(xi.pose.rotation(), xi.pose.translation(), xi.velocity,
                                    xj.pose.rotation(), xj.pose.translation(), xj.velocity, b, g);
    cost += (fct.pim.sqrtInformation() * r).squaredNorm();
  }
  for (const auto& [fid, tr] : features_) {
    const NavState& root = frames_.at(tr.state.root_keyframe).x;
    const auto basis = tangentBasis(tr.state.s);
    for (const auto& ob : tr.obs) {
      const NavState& obs = frames_.at(ob.obs_frame).x;
      const Vec3 r = projectionResidual(tr.state, root.pose, obs.pose, p_.T_bc, ob.s_obs);
      const Eigen::Vector2d rw = tangentBasis(ob.s_obs).transpose() * r / p_.bearing_sigma;
      const double nr = rw.norm();
      cost += nr <= p_.huber_delta ? nr * nr : p_.huber_delta * (2.0 * nr - p_.huber_delta);
    }
    (void)basis;
  }
  for (const auto& fct : baro_factors_) {
    const double r = baroResidual(frames_.at(fct.frame).x, fct.m, baro_offset_b_);
    cost += r * r / fct.m.sigma2;
  }
  for (const auto& fct : att_factors_) {
    const Vec3 r = attitudeResidual(frames_.at(fct.frame).x, fct.v_ref);
    cost += r.squaredNorm() / (p_.attitude_sigma * p_.attitude_sigma);
  }
  for (const auto& fct : zupt_factors_) {
    cost += frames_.at(fct.frame).x.velocity.squaredNorm() / (p_.zupt_sigma * p_.zupt_sigma);
  }
  for (const auto& fct : grav_att_factors_) {
    const Vec3 r = gravityAttitudeResidual(frames_.at(fct.frame).x, fct.accel_dir, g);
    cost += r.squaredNorm() / (p_.grav_att_sigma * p_.grav_att_sigma);
  }
  for (const auto& fct : depth_priors_) {
    const double r = features_.at(fct.feature).state.rho - fct.rho_lrf;
    cost += r * r / (fct.sigma * fct.sigma);
  }
  for (const auto& fct : bias_walks_) {
    const Eigen::VectorXd r =
        biasVec(*frames_.at(fct.kf_j).x.bias) - biasVec(*frames_.at(fct.kf_i).x.bias);
    Eigen::VectorXd w(6);
    const double sg = p_.imu_noise.sigma_bg_walk * std::sqrt(fct.dt);
    const double sa = p_.imu_noise.sigma_ba_walk * std::sqrt(fct.dt);
    w << 1 / sg, 1 / sg, 1 / sg, 1 / sa, 1 / sa, 1 / sa;
    cost += (w.asDiagonal() * r).squaredNorm();
  }
  for (const auto& fct : state_priors_) {
    const NavState& x = frames_.at(fct.frame).x;
    Eigen::VectorXd d(fct.H.rows());
    d.head<9>() = navDelta(x, fct.lin);
    int off = 9;
    if (fct.has_bias) {
      d.segment<6>(off) = biasVec(*x.bias) - biasVec(fct.bias_lin);
      off += 6;
    }
    if (fct.has_baro_offset) d(off) = baro_offset_b_ - fct.baro_offset_lin;
    const Eigen::VectorXd e = d - fct.mu;
    cost += e.dot(fct.H * e);
  }
  return cost;
}

void Backend::assemble(const Layout& lay, double lambda, SchurSystem* sys) {
  const int nb = lay.nav_dim;
  const int nf = int(lay.feature_order.size());
  sys->B = Eigen::MatrixXd::Zero(nb, nb);
  sys->E = Eigen::MatrixXd::Zero(nb, nf);
  sys->C = Eigen::VectorXd::Zero(nf);
  sys->d_B = Eigen::VectorXd::Zero(nb);
  sys->d_C = Eigen::VectorXd::Zero(nf);
  sys->block_sizes = lay.block_sizes;

  auto var_dirty = [&](const VarKey& k) {
    switch (k.kind) {
      case VarKind::Nav:
      case VarKind::Bias:
        return dirty_frames_.count(k.id) > 0;
      case VarKind::Feature:
        return dirty_features_.count(k.id) > 0;
      case VarKind::BaroOffset:
        return false;  // scalar; its Jacobians are constant
    }
    return true;
  };
  auto needs_relin = [&](const Linearized& c) {
    if (!c.valid) return true;
    for (const auto& b : c.blocks)
      if (var_dirty(b.key)) return true;
    return false;
  };
  auto nav_offset = [&](const VarKey& k) -> int {
    switch (k.kind) {
      case VarKind::Nav:
        return lay.frame_offset.at(k.id);
      case VarKind::Bias:
        return lay.bias_offset.at(k.id);
      case VarKind::BaroOffset:
        return lay.baro_offset_index;
      default:
        return -1;
    }
  };
  auto current_delta = [&](const LinBlock& b) -> Eigen::VectorXd {
    switch (b.key.kind) {
      case VarKind::Nav:
        return navDelta(frames_.at(b.key.id).x, b.lin_nav);
      case VarKind::Bias:
        return biasVec(*frames_.at(b.key.id).x.bias) - b.lin_vec;
      case VarKind::BaroOffset: {
        Eigen::VectorXd d(1);
        d(0) = baro_offset_b_ - b.lin_vec(0);
        return d;
      }
      case VarKind::Feature: {
        Eigen::VectorXd d(1);
        d(0) = features_.at(b.key.id).state.rho - b.lin_vec(0);
        return d;
      }
    }
    return Eigen::VectorXd();
  };

  auto scatter = [&](const Linearized& c) {
    // First-order corrected residual.
    Eigen::VectorXd r = c.r;
    for (const auto& b : c.blocks) r += b.J * current_delta(b);

    for (size_t a = 0; a < c.blocks.size(); ++a) {
      const auto& ba = c.blocks[a];
      const bool a_feat = ba.key.kind == VarKind::Feature;
      const int ia = a_feat ? lay.feature_index.at(ba.key.id) : nav_offset(ba.key);
      // Gradient d = -J^T r.
      if (a_feat)
        sys->d_C(ia) -= (ba.J.transpose() * r)(0);
      else
        sys->d_B.segment(ia, ba.J.cols()) -= ba.J.transpose() * r;

      for (size_t bb = 0; bb < c.blocks.size(); ++bb) {
        const auto& bbk = c.blocks[bb];
        const bool b_feat = bbk.key.kind == VarKind::Feature;
        const int ib = b_feat ? lay.feature_index.at(bbk.key.id) : nav_offset(bbk.key);
        const Eigen::MatrixXd h = ba.J.transpose() * bbk.J;
        if (!a_feat && !b_feat)
          sys->B.block(ia, ib, h.rows(), h.cols()) += h;
        else if (!a_feat && b_feat)
          sys->E.block(ia, ib, h.rows(), 1) += h;
        else if (a_feat && b_feat && ia == ib)
          sys->C(ia) += h(0, 0);
        // feature x nav handled by the symmetric visit (E only stored once)
      }
    }
  };

  const Vec3 g = p_.gravity;

  auto nav_block = [&](int64_t id) {
    LinBlock b;
    b.key = {VarKind::Nav, id};
    b.lin_nav = frames_.at(id).x;
    return b;
  };
  auto bias_block = [&](int64_t id) {
    LinBlock b;
    b.key = {VarKind::Bias, id};
    b.lin_vec = biasVec(*frames_.at(id).x.bias);
    return b;
  };

  // --- preintegration ---
  for (auto& fct : preint_factors_) {
    if (needs_relin(fct.cache)) {
      ++jacobian_evals_;
      const NavState& xi = frames_.at(fct.i).x;
      const NavState& xj = frames_.at(fct.j).x;
      const ImuBias& b = *frames_.at(fct.bias_kf).x.bias;
      Eigen::Matrix<double, 9, 9> ji, jj;
      Eigen::Matrix<double, 9, 6> jb;
      const Vec9 r =
          fct.pim.residual(xi.pose.rotation(), xi.pose.translation(), xi.velocity,
                           xj.pose.rotation(), xj.pose.translation(), xj.velocity, b, g, &ji, &jj,
                           &jb);
      const Mat9 w = fct.pim.sqrtInformation();
      fct.cache.blocks.clear();
      auto bi = nav_block(fct.i);
      bi.J = w * permutePreint(ji);
      auto bj = nav_block(fct.j);
      bj.J = w * permutePreint(jj);
      auto bbias = bias_block(fct.bias_kf);
      bbias.J = w * jb;
      fct.cache.blocks = {bi, bj, bbias};
      fct.cache.r = w * r;
      fct.cache.valid = true;
    }
    scatter(fct.cache);
  }

  // --- projections ---
  for (auto& [fid, tr] : features_) {
    const int64_t root_id = tr.state.root_keyframe;
    for (auto& ob : tr.obs) {
      if (needs_relin(ob.cache)) {
        ++jacobian_evals_;
        const NavState& root = frames_.at(root_id).x;
        const NavState& obs = frames_.at(ob.obs_frame).x;
        ProjectionJacobians pj;
        const Vec3 r = projectionResidual(tr.state, root.pose, obs.pose, p_.T_bc, ob.s_obs, &pj);
        const Eigen::Matrix<double, 2, 3> bt =
            tangentBasis(ob.s_obs).transpose() / p_.bearing_sigma;
        Eigen::Vector2d rw = bt * r;
        // Huber IRLS scaling baked into the whitening at relinearization.
        const double wgt = std::sqrt(huberWeight(rw.norm(), p_.huber_delta));

        auto broot = nav_block(root_id);
        broot.J = Eigen::MatrixXd::Zero(2, 9);
        broot.J.leftCols<6>() = wgt * bt * pj.J_root;
        auto bobs = nav_block(ob.obs_frame);
        bobs.J = Eigen::MatrixXd::Zero(2, 9);
        bobs.J.leftCols<6>() = wgt * bt * pj.J_obs;
        LinBlock bf;
        bf.key = {VarKind::Feature, fid};
        bf.lin_vec = Eigen::VectorXd::Constant(1, tr.state.rho);
        bf.J = wgt * bt * pj.J_rho;
        ob.cache.blocks = {broot, bobs, bf};
        ob.cache.r = wgt * rw;
        ob.cache.valid = true;
      }
      scatter(ob.cache);
    }
  }

  // --- barometer ---
  for (auto& fct : baro_factors_) {
    if (needs_relin(fct.cache)) {
      ++jacobian_evals_;
      const double w = 1.0 / std::sqrt(fct.m.sigma2);
      Eigen::Matrix<double, 1, 3> jr, jp;
      double jb = 0.0;
      const double r = baroResidual(frames_.at(fct.frame).x, fct.m, baro_offset_b_, &jr, &jp, &jb);
      auto bn = nav_block(fct.frame);
      bn.J = Eigen::MatrixXd::Zero(1, 9);
      bn.J.block<1, 3>(0, 0) = w * jr;
      bn.J.block<1, 3>(0, 3) = w * jp;
      LinBlock bb;
      bb.key = {VarKind::BaroOffset, 0};
      bb.lin_vec = Eigen::VectorXd::Constant(1, baro_offset_b_);
      bb.J = Eigen::MatrixXd::Constant(1, 1, w * jb);
      fct.cache.blocks = {bn, bb};
      fct.cache.r = Eigen::VectorXd::Constant(1, w * r);
      fct.cache.valid = true;
    }
    scatter(fct.cache);
  }

  // --- attitude ---
  for (auto& fct : att_factors_) {
    if (needs_relin(fct.cache)) {
      ++jacobian_evals_;
      Mat3 jr;
      const Vec3 r = attitudeResidual(frames_.at(fct.frame).x, fct.v_ref, &jr);
      auto bn = nav_block(fct.frame);
      bn.J = Eigen::MatrixXd::Zero(3, 9);
      bn.J.leftCols<3>() = jr / p_.attitude_sigma;
      fct.cache.blocks = {bn};
      fct.cache.r = r / p_.attitude_sigma;
      fct.cache.valid = true;
    }
    scatter(fct.cache);
  }

  // --- zero velocity ---
  for (auto& fct : zupt_factors_) {
    if (needs_relin(fct.cache)) {
      ++jacobian_evals_;
      auto bn = nav_block(fct.frame);
      bn.J = Eigen::MatrixXd::Zero(3, 9);
      bn.J.rightCols<3>() = Mat3::Identity() / p_.zupt_sigma;
      fct.cache.blocks = {bn};
      fct.cache.r = frames_.at(fct.frame).x.velocity / p_.zupt_sigma;
      fct.cache.valid = true;
    }
    scatter(fct.cache);
  }

  // --- gravity attitude ---
  for (auto& fct : grav_att_factors_) {
    if (needs_relin(fct.cache)) {
      ++jacobian_evals_;
      Mat3 jr;
      const Vec3 r = gravityAttitudeResidual(frames_.at(fct.frame).x, fct.accel_dir, g, &jr);
      auto bn = nav_block(fct.frame);
      bn.J = Eigen::MatrixXd::Zero(3, 9);
      bn.J.leftCols<3>() = jr / p_.grav_att_sigma;
      fct.cache.blocks = {bn};
      fct.cache.r = r / p_.grav_att_sigma;
      fct.cache.valid = true;
    }
    scatter(fct.cache);
  }

  // --- inverse-depth priors ---
  for (auto& fct : depth_priors_) {
    if (needs_relin(fct.cache)) {
      ++jacobian_evals_;
      LinBlock bf;
      bf.key = {VarKind::Feature, fct.feature};
      bf.lin_vec = Eigen::VectorXd::Constant(1, features_.at(fct.feature).state.rho);
      bf.J = Eigen::MatrixXd::Constant(1, 1, 1.0 / fct.sigma);
      fct.cache.blocks = {bf};
      fct.cache.r = Eigen::VectorXd::Constant(
          1, (features_.at(fct.feature).state.rho - fct.rho_lrf) / fct.sigma);
      fct.cache.valid = true;
    }
    scatter(fct.cache);
  }

  // --- bias random walk between keyframes ---
  for (auto& fct : bias_walks_) {
    if (needs_relin(fct.cache)) {
      ++jacobian_evals_;
      Eigen::VectorXd w(6);
      const double sg = p_.imu_noise.sigma_bg_walk * std::sqrt(fct.dt);
      const double sa = p_.imu_noise.sigma_ba_walk * std::sqrt(fct.dt);
      w << 1 / sg, 1 / sg, 1 / sg, 1 / sa, 1 / sa, 1 / sa;
      auto bi = bias_block(fct.kf_i);
      bi.J = Eigen::MatrixXd((-w).asDiagonal());
      auto bj = bias_block(fct.kf_j);
      bj.J = Eigen::MatrixXd(w.asDiagonal());
      fct.cache.blocks = {bi, bj};
      fct.cache.r = w.asDiagonal() * (bj.lin_vec - bi.lin_vec);
      fct.cache.valid = true;
    }
    scatter(fct.cache);
  }

  // --- state priors (gauge + marginalization) ---
  for (auto& fct : state_priors_) {
    if (needs_relin(fct.cache)) {
      ++jacobian_evals_;
      const NavState& x = frames_.at(fct.frame).x;
      Eigen::VectorXd d(fct.H.rows());
      d.head<9>() = navDelta(x, fct.lin);
      int off = 9;
      if (fct.has_bias) {
        d.segment<6>(off) = biasVec(*x.bias) - biasVec(fct.bias_lin);
        off += 6;
      }
      if (fct.has_baro_offset) d(off) = baro_offset_b_ - fct.baro_offset_lin;

      fct.cache.blocks.clear();
      auto bn = nav_block(fct.frame);
      bn.J = fct.sqrtH.leftCols<9>();
      fct.cache.blocks.push_back(bn);
      off = 9;
      if (fct.has_bias) {
        auto bb = bias_block(fct.frame);
        bb.J = fct.sqrtH.middleCols<6>(off);
        fct.cache.blocks.push_back(bb);
        off += 6;
      }
      if (fct.has_baro_offset) {
        LinBlock bb;
        bb.key = {VarKind::BaroOffset, 0};
        bb.lin_vec = Eigen::VectorXd::Constant(1, baro_offset_b_);
        bb.J = fct.sqrtH.col(off);
        fct.cache.blocks.push_back(bb);
      }
      fct.cache.r = fct.sqrtH * (d - fct.mu);
      fct.cache.valid = true;
    }
    scatter(fct.cache);
  }

  // LM damping on every diagonal entry.
  sys->B.diagonal().array() += lambda;
  sys->C.array() += lambda;
}

void Backend::applyDelta(const Layout& lay, const Eigen::VectorXd& dx_nav,
                         const Eigen::VectorXd& dx_feat) {
  for (auto& [id, fr] : frames_) {
    const int off = lay.frame_offset.at(id);
    fr.x.retract(dx_nav.segment<9>(off));
    auto bit = lay.bias_offset.find(id);
    if (bit != lay.bias_offset.end() && fr.x.bias) {
      fr.x.bias->gyro += dx_nav.segment<3>(bit->second);
      fr.x.bias->accel += dx_nav.segment<3>(bit->second + 3);
    }
  }
  baro_offset_b_ += dx_nav(lay.baro_offset_index);
  for (size_t k = 0; k < lay.feature_order.size(); ++k)
    features_.at(lay.feature_order[k]).state.rho += dx_feat(long(k));
}

Backend::SolveStats Backend::optimize() {
  SolveStats stats;
  double lambda = p_.lm.lambda_init;

  if (structure_dirty_) {
    // New factors/variables invalidate nothing that exists, but new
    // variables are already in the dirty sets; caches stay valid.
    structure_dirty_ = false;
  }

  const auto now_ms = [] {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };

  double t0 = now_ms();
  double cost = evaluateCost();
  stats.ms_cost += now_ms() - t0;
  stats.cost = cost;

  const Layout lay = makeLayout();
  for (int it = 0; it < p_.lm.max_iterations; ++it) {
    stats.relinearized_vars += int(dirty_frames_.size() + dirty_features_.size());

    SchurSystem sys;
    t0 = now_ms();
    assemble(lay, lambda, &sys);
    stats.ms_assemble += now_ms() - t0;
    dirty_frames_.clear();
    dirty_features_.clear();

    t0 = now_ms();
    Eigen::VectorXd dx_nav;
    bool solved = false;
    for (int retry = 0; retry <= p_.lm.max_retries && !solved; ++retry) {
      try {
        dx_nav = solveSchurPcg(sys, p_.lm.pcg);
        solved = true;
      } catch (const NumericalFailure&) {
        lambda = std::min(lambda * p_.lm.lambda_up, p_.lm.lambda_max);
        sys.B.diagonal().array() += lambda;
        sys.C.array() += lambda;
      }
    }
    if (!solved) throw NumericalFailure("optimize: PCG failed after retries");
    const Eigen::VectorXd dx_feat = sys.backSubstitute(dx_nav);
    stats.ms_solve += now_ms() - t0;

    // Trial step.
    auto frames_bak = frames_;
    const double b_bak = baro_offset_b_;
    std::map<int64_t, double> rho_bak;
    for (const auto& [fid, tr] : features_) rho_bak[fid] = tr.state.rho;

    applyDelta(lay, dx_nav, dx_feat);
    t0 = now_ms();
    const double new_cost = evaluateCost();
    stats.ms_cost += now_ms() - t0;
    ++stats.lm_iterations;

    if (std::isfinite(new_cost) && new_cost < cost) {
      const double rel_drop = (cost - new_cost) / std::max(cost, 1e-12);
      cost = new_cost;
      lambda = std::max(lambda * p_.lm.lambda_down, p_.lm.lambda_min);
      markRelinearization();
      if (dx_nav.lpNorm<Eigen::Infinity>() < 1e-8 || rel_drop < p_.lm.rel_cost_tol) break;
    } else {
      frames_ = std::move(frames_bak);
      baro_offset_b_ = b_bak;
      for (auto& [fid, r] : rho_bak) features_.at(fid).state.rho = r;
      lambda = std::min(lambda * p_.lm.lambda_up, p_.lm.lambda_max);
      if (lambda >= p_.lm.lambda_max) break;
    }
  }
  stats.cost = cost;
  stats.jacobian_evals = jacobian_evals_;
  return stats;
}

void Backend::marginalizeOldest() {
  // 1. Select states to remove: the oldest keyframe and every frame
  // parented to it; gather features rooted inside that group.
  const int64_t kf0 = keyframes_.front();
  const int64_t x_next = keyframes_[1];
  std::vector<int64_t> removed;
  for (const auto& [id, fr] : frames_) {
    if (id == kf0 || (fr.x.parent_keyframe == kf0 && id != kf0 && !fr.x.is_keyframe))
      removed.push_back(id);
  }
  std::set<int64_t> removed_set(removed.begin(), removed.end());
  removed_set.erase(x_next);

  // 2. Split features: clones carry the in-window observations into the
  // prior; survivors are re-rooted at x_next with the accumulated shift.
  struct Clone {
    int64_t feature;
    FeatureState state;                // as marginalized (original root)
    std::vector<ProjFactorG> obs;      // observations on removed frames
    std::vector<DepthPriorG> priors;
  };
  std::vector<Clone> clones;
  std::vector<int64_t> dead_features;
  for (auto& [fid, tr] : features_) {
    if (!removed_set.count(tr.state.root_keyframe)) continue;
    Clone cl;
    cl.feature = fid;
    cl.state = tr.state;
    std::vector<ProjFactorG> kept;
    for (auto& ob : tr.obs) {
      if (removed_set.count(ob.obs_frame))
        cl.obs.push_back(ob);
      else
        kept.push_back(ob);
    }
    for (auto& dp : depth_priors_)
      if (dp.feature == fid) cl.priors.push_back(dp);

    const bool survives = !kept.empty();
    if (survives) {
      const Pose3 old_root = frames_.at(tr.state.root_keyframe).x.pose;
      const Pose3 new_root = frames_.at(x_next).x.pose;
      shiftRoot(tr.state, old_root, new_root, x_next);
      tr.obs = std::move(kept);
      for (auto& ob : tr.obs) ob.cache.valid = false;
    } else {
      dead_features.push_back(fid);
    }
    if (!cl.obs.empty() || !survives) clones.push_back(std::move(cl));
  }

  // 3-4. Build the dense marginalization system over
  // [removed navs + kf0 bias | x_next nav + bias + baro offset | clones].
  std::map<int64_t, int> nav_off;
  int n1 = 0;
  for (int64_t id : removed) {
    nav_off[id] = n1;
    n1 += 9;
  }
  const int kf0_bias_off = n1;
  n1 += 6;
  const int n2 = 16;  // x_next nav(9) + bias(6) + baro offset(1)
  const int x_next_off = n1;
  const int x_next_bias_off = n1 + 9;
  const int baro_off = n1 + 15;
  int n3 = 0;
  std::map<int64_t, int> clone_off;
  for (const auto& cl : clones) {
    clone_off[cl.feature] = n1 + n2 + n3;
    n3 += 1;
  }

  const int dim = n1 + n2 + n3;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);

  auto offset_of = [&](const VarKey& k) -> int {
    switch (k.kind) {
      case VarKind::Nav:
        if (k.id == x_next) return x_next_off;
        return nav_off.count(k.id) ? nav_off.at(k.id) : -1;
      case VarKind::Bias:
        if (k.id == kf0) return kf0_bias_off;
        if (k.id == x_next) return x_next_bias_off;
        return -1;
      case VarKind::BaroOffset:
        return baro_off;
      case VarKind::Feature:
        return clone_off.count(k.id) ? clone_off.at(k.id) : -1;
    }
    return -1;
  };
  auto scatter_marg = [&](const Linearized& c) {
    for (size_t a = 0; a < c.blocks.size(); ++a) {
      const int ia = offset_of(c.blocks[a].key);
      if (ia < 0) continue;  // variable not part of the marginal system
      rhs.segment(ia, c.blocks[a].J.cols()) -= c.blocks[a].J.transpose() * c.r;
      for (size_t b = 0; b < c.blocks.size(); ++b) {
        const int ib = offset_of(c.blocks[b].key);
        if (ib < 0) continue;
        H.block(ia, ib, c.blocks[a].J.cols(), c.blocks[b].J.cols()) +=
            c.blocks[a].J.transpose() * c.blocks[b].J;
      }
    }
  };

  // Fresh linearization of every factor entering the prior, at current
  // estimates (delayed updates applied by construction).
  const Vec3 g = p_.gravity;
  auto lin_nav_block = [&](int64_t id) {
    LinBlock b;
    b.key = {VarKind::Nav, id};
    b.lin_nav = frames_.at(id).x;
    return b;
  };

  // Preintegration factors inside the group (and the one into x_next).
  std::vector<PreintFactorG> kept_preint;
  for (auto& fct : preint_factors_) {
    const bool in_marg = removed_set.count(fct.i) || removed_set.count(fct.j) ||
                         fct.bias_kf == kf0;
    if (!in_marg) {
      kept_preint.push_back(std::move(fct));
      continue;
    }
    const NavState& xi = frames_.at(fct.i).x;
    const NavState& xj = frames_.at(fct.j).x;
    const ImuBias& b = *frames_.at(fct.bias_kf).x.bias;
    Eigen::Matrix<double, 9, 9> ji, jj;
    Eigen::Matrix<double, 9, 6> jb;
    const Vec9 r = fct.pim.residual(xi.pose.rotation(), xi.pose.translation(), xi.velocity,
                                    xj.pose.rotation(), xj.pose.translation(), xj.velocity, b, g,
                                    &ji, &jj, &jb);
    const Mat9 w = fct.pim.sqrtInformation();
    Linearized lin;
    auto bi = lin_nav_block(fct.i);
    bi.J = w * permutePreint(ji);
    auto bj = lin_nav_block(fct.j);
    bj.J = w * permutePreint(jj);
    LinBlock bbias;
    bbias.key = {VarKind::Bias, fct.bias_kf};
    bbias.J = w * jb;
    lin.blocks = {bi, bj, bbias};
    lin.r = w * r;
    scatter_marg(lin);
  }
  preint_factors_ = std::move(kept_preint);

  // Cloned feature observations and their depth priors.
  for (const auto& cl : clones) {
    const NavState& root = frames_.at(cl.state.root_keyframe).x;
    for (const auto& ob : cl.obs) {
      const NavState& obs = frames_.at(ob.obs_frame).x;
      ProjectionJacobians pj;
      const Vec3 r = projectionResidual(cl.state, root.pose, obs.pose, p_.T_bc, ob.s_obs, &pj);
      const Eigen::Matrix<double, 2, 3> bt = tangentBasis(ob.s_obs).transpose() / p_.bearing_sigma;
      const Eigen::Vector2d rw = bt * r;
      const double wgt = std::sqrt(huberWeight(rw.norm(), p_.huber_delta));
      Linearized lin;
      auto broot = lin_nav_block(cl.state.root_keyframe);
      broot.J = Eigen::MatrixXd::Zero(2, 9);
      broot.J.leftCols<6>() = wgt * bt * pj.J_root;
      auto bobs = lin_nav_block(ob.obs_frame);
      bobs.J = Eigen::MatrixXd::Zero(2, 9);
      bobs.J.leftCols<6>() = wgt * bt * pj.J_obs;
      LinBlock bf;
      bf.key = {VarKind::Feature, cl.feature};
      bf.J = wgt * bt * pj.J_rho;
      lin.blocks = {broot, bobs, bf};
      lin.r = wgt * rw;
      scatter_marg(lin);
    }
    for (const auto& dp : cl.priors) {
      Linearized lin;
      LinBlock bf;
      bf.key = {VarKind::Feature, cl.feature};
      bf.J = Eigen::MatrixXd::Constant(1, 1, 1.0 / dp.sigma);
      lin.blocks = {bf};
      lin.r = Eigen::VectorXd::Constant(1, (cl.state.rho - dp.rho_lrf) / dp.sigma);
      scatter_marg(lin);
    }
  }

  // Unary factors on removed frames.
  auto take_unary = [&](auto& container, auto linfn) {
    auto kept = container;
    kept.clear();
    for (auto& fct : container) {
      if (removed_set.count(fct.frame))
        linfn(fct);
      else
        kept.push_back(std::move(fct));
    }
    container = std::move(kept);
  };
  take_unary(baro_factors_, [&](BaroFactorG& fct) {
    const double w = 1.0 / std::sqrt(fct.m.sigma2);
    Eigen::Matrix<double, 1, 3> jr, jp;
    double jb = 0.0;
    const double r = baroResidual(frames_.at(fct.frame).x, fct.m, baro_offset_b_, &jr, &jp, &jb);
    Linearized lin;
    auto bn = lin_nav_block(fct.frame);
    bn.J = Eigen::MatrixXd::Zero(1, 9);
    bn.J.block<1, 3>(0, 0) = w * jr;
    bn.J.block<1, 3>(0, 3) = w * jp;
    LinBlock bb;
    bb.key = {VarKind::BaroOffset, 0};
    bb.J = Eigen::MatrixXd::Constant(1, 1, w * jb);
    lin.blocks = {bn, bb};
    lin.r = Eigen::VectorXd::Constant(1, w * r);
    scatter_marg(lin);
  });
  take_unary(att_factors_, [&](AttFactorG& fct) {
    Mat3 jr;
    const Vec3 r = attitudeResidual(frames_.at(fct.frame).x, fct.v_ref, &jr);
    Linearized lin;
    auto bn = lin_nav_block(fct.frame);
    bn.J = Eigen::MatrixXd::Zero(3, 9);
    bn.J.leftCols<3>() = jr / p_.attitude_sigma;
    lin.blocks = {bn};
    lin.r = r / p_.attitude_sigma;
    scatter_marg(lin);
  });
  take_unary(zupt_factors_, [&](ZupFactorG& fct) {
    Linearized lin;
    auto bn = lin_nav_block(fct.frame);
    bn.J = Eigen::MatrixXd::Zero(3, 9);
    bn.J.rightCols<3>() = Mat3::Identity() / p_.zupt_sigma;
    lin.blocks = {bn};
    lin.r = frames_.at(fct.frame).x.velocity / p_.zupt_sigma;
    scatter_marg(lin);
  });
  take_unary(grav_att_factors_, [&](GravAttFactorG& fct) {
    Mat3 jr;
    const Vec3 r = gravityAttitudeResidual(frames_.at(fct.frame).x, fct.accel_dir, g, &jr);
    Linearized lin;
    auto bn = lin_nav_block(fct.frame);
    bn.J = Eigen::MatrixXd::Zero(3, 9);
    bn.J.leftCols<3>() = jr / p_.grav_att_sigma;
    lin.blocks = {bn};
    lin.r = r / p_.grav_att_sigma;
    scatter_marg(lin);
  });

  // Bias walk from kf0 to x_next.
  {
    std::vector<BiasWalkG> kept;
    for (auto& fct : bias_walks_) {
      if (fct.kf_i != kf0) {
        kept.push_back(std::move(fct));
        continue;
      }
      Eigen::VectorXd w(6);
      const double sg = p_.imu_noise.sigma_bg_walk * std::sqrt(fct.dt);
      const double sa = p_.imu_noise.sigma_ba_walk * std::sqrt(fct.dt);
      w << 1 / sg, 1 / sg, 1 / sg, 1 / sa, 1 / sa, 1 / sa;
      Linearized lin;
      LinBlock bi;
      bi.key = {VarKind::Bias, fct.kf_i};
      bi.J = Eigen::MatrixXd((-w).asDiagonal());
      LinBlock bj;
      bj.key = {VarKind::Bias, fct.kf_j};
      bj.J = Eigen::MatrixXd(w.asDiagonal());
      lin.blocks = {bi, bj};
      lin.r = w.asDiagonal() *
              (biasVec(*frames_.at(fct.kf_j).x.bias) - biasVec(*frames_.at(fct.kf_i).x.bias));
      scatter_marg(lin);
    }
    bias_walks_ = std::move(kept);
  }

  // Existing priors anchored at removed frames (previous marginal prior,
  // stationary prior) are absorbed into the new one.
  {
    std::vector<StatePriorG> kept;
    for (auto& fct : state_priors_) {
      if (!removed_set.count(fct.frame)) {
        kept.push_back(std::move(fct));
        continue;
      }
      const NavState& x = frames_.at(fct.frame).x;
      Eigen::VectorXd d(fct.H.rows());
      d.head<9>() = navDelta(x, fct.lin);
      int off = 9;
      if (fct.has_bias) {
        d.segment<6>(off) = biasVec(*x.bias) - biasVec(fct.bias_lin);
        off += 6;
      }
      if (fct.has_baro_offset) d(off) = baro_offset_b_ - fct.baro_offset_lin;
      Linearized lin;
      auto bn = lin_nav_block(fct.frame);
      bn.J = fct.sqrtH.leftCols<9>();
      lin.blocks.push_back(bn);
      off = 9;
      if (fct.has_bias) {
        LinBlock bb;
        bb.key = {VarKind::Bias, fct.frame};
        bb.J = fct.sqrtH.middleCols<6>(off);
        lin.blocks.push_back(bb);
        off += 6;
      }
      if (fct.has_baro_offset) {
        LinBlock bb;
        bb.key = {VarKind::BaroOffset, 0};
        bb.J = fct.sqrtH.col(off);
        lin.blocks.push_back(bb);
      }
      lin.r = fct.sqrtH * (d - fct.mu);
      scatter_marg(lin);
    }
    state_priors_ = std::move(kept);
  }

  // 5-7. Eliminate clones, then the removed nav/bias states; clip and
  // build the prior on x_next (+ the barometer datum).
  const int n1_total = n1;
  const MarginalPriorInfo prior = marginalizeBlocks(H, rhs, n1_total, n2, n3);

  StatePriorG sp;
  sp.frame = x_next;
  sp.has_bias = true;
  sp.has_baro_offset = true;
  sp.H = prior.H;
  sp.sqrtH = matrixSqrtSym(prior.H);
  sp.mu = prior.mu;
  sp.lin = frames_.at(x_next).x;
  sp.bias_lin = *frames_.at(x_next).x.bias;
  sp.baro_offset_lin = baro_offset_b_;
  state_priors_.push_back(std::move(sp));

  // Discard removed states, features, and stale projection factors.
  for (int64_t fid : dead_features) {
    features_.erase(fid);
    lin_rho_.erase(fid);
    dirty_features_.erase(fid);
  }
  {
    std::vector<DepthPriorG> kept;
    for (auto& dp : depth_priors_)
      if (features_.count(dp.feature)) kept.push_back(std::move(dp));
    depth_priors_ = std::move(kept);
  }
  for (int64_t id : removed_set) {
    frames_.erase(id);
    lin_points_.erase(id);
    dirty_frames_.erase(id);
  }
  keyframes_.erase(keyframes_.begin());
  structure_dirty_ = true;
  dirty_frames_.insert(x_next);
}

}  // namespace tio
