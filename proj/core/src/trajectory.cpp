#include "tio/trajectory.hpp"

#include <cmath>

namespace tio {

namespace {

// Quintic smoothstep: C2 at both ends.
inline double smooth(double u) { return u <= 0 ? 0.0 : u >= 1 ? 1.0 : u * u * u * (10.0 + u * (-15.0 + 6.0 * u)); }
inline double dsmooth(double u) { return u <= 0 || u >= 1 ? 0.0 : u * u * (30.0 + u * (-60.0 + 30.0 * u)); }

// Piecewise phase: speed and heading each blend between endpoint values.
struct Phase {
  double duration = 0.0;
  double s0 = 0.0, s1 = 0.0;        // speed, m/s
  double psi0 = 0.0, psi1 = 0.0;    // heading, rad
  double blend = 1.0;               // fraction of the phase spent blending
};

struct Profile {
  std::vector<Phase> phases;

  void speedHeading(double t, double* s, double* ds, double* psi, double* dpsi) const {
    double t0 = 0.0;
    for (const auto& ph : phases) {
      if (t <= t0 + ph.duration || &ph == &phases.back()) {
        const double tb = std::max(1e-9, ph.blend * ph.duration);
        const double u = std::min(1.0, (t - t0) / tb);
        const double S = smooth(u);
        const double dS = dsmooth(u) / tb;
        *s = ph.s0 + (ph.s1 - ph.s0) * S;
        *ds = (ph.s1 - ph.s0) * dS;
        *psi = ph.psi0 + (ph.psi1 - ph.psi0) * S;
        *dpsi = (ph.psi1 - ph.psi0) * dS;
        return;
      }
      t0 += ph.duration;
    }
    *s = *ds = *psi = *dpsi = 0.0;
  }

  double total() const {
    double d = 0.0;
    for (const auto& ph : phases) d += ph.duration;
    return d;
  }
};

Profile buildProfile(const TrajectorySpec& spec) {
  Profile p;
  const double deg = M_PI / 180.0;
  switch (spec.kind) {
    case TrajectoryKind::Hover: {
      p.phases.push_back({spec.hover_duration, 0.0, 0.0, 0.0, 0.0, 1.0});
      break;
    }
    case TrajectoryKind::Box: {
      p.phases.push_back({spec.initial_hover, 0.0, 0.0, 0.0, 0.0, 1.0});
      // Ramp covers s*T/2 of path.
      const double ramp_path = 0.5 * spec.cruise_speed * spec.ramp_duration;
      p.phases.push_back({spec.ramp_duration, 0.0, spec.cruise_speed, 0.0, 0.0, 1.0});
      const double cruise_path = spec.path_length - ramp_path;
      const double side = cruise_path / 4.0;
      double psi = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double dur = side / spec.cruise_speed;
        const double psi_next = psi + (k < 3 ? 90.0 * deg : 0.0);
        // Heading turns at the end of the side, over turn_duration.
        p.phases.push_back({k < 3 ? dur - spec.turn_duration : dur, spec.cruise_speed,
                            spec.cruise_speed, psi, psi, 1.0});
        if (k < 3)
          p.phases.push_back({spec.turn_duration, spec.cruise_speed, spec.cruise_speed, psi,
                              psi_next, 1.0});
        psi = psi_next;
      }
      break;
    }
    case TrajectoryKind::StraightSweep: {
      p.phases.push_back({spec.initial_hover, 0.0, 0.0, 0.0, 0.0, 1.0});
      p.phases.push_back({spec.ramp_duration, 0.0, spec.cruise_speed, 0.0, 0.0, 1.0});
      const int steps = int(std::lround(spec.sweep_arc_deg / spec.heading_increment_deg));
      double psi = 0.0;
      for (int k = 0; k <= steps; ++k) {
        p.phases.push_back({spec.leg_length / spec.cruise_speed, spec.cruise_speed,
                            spec.cruise_speed, psi, psi, 1.0});
        if (k < steps) {
          const double psi_next = psi + spec.heading_increment_deg * deg;
          p.phases.push_back({spec.turn_duration, spec.cruise_speed, spec.cruise_speed, psi,
                              psi_next, 1.0});
          psi = psi_next;
        }
      }
      break;
    }
    case TrajectoryKind::Slalom: {
      p.phases.push_back({spec.initial_hover, 0.0, 0.0, 0.0, 0.0, 1.0});
      p.phases.push_back({spec.ramp_duration, 0.0, spec.slalom_speed, 0.0, 0.0, 1.0});
      const double amp = spec.slalom_amplitude_deg * deg;
      const double half = spec.slalom_period / 2.0;
      const int cycles = int(spec.slalom_duration / spec.slalom_period);
      double psi = 0.0;
      for (int k = 0; k < 2 * cycles; ++k) {
        const double target = (k % 2 == 0) ? amp : -amp;
        p.phases.push_back({half, spec.slalom_speed, spec.slalom_speed, psi, target, 1.0});
        psi = target;
      }
      p.phases.push_back({half, spec.slalom_speed, spec.slalom_speed, psi, 0.0, 1.0});
      break;
    }
  }
  return p;
}

}  // namespace

Pose3 TruthSample::pose() const {
  Pose3 T;
  T.rotation() = rotation();
  T.translation() = position;
  return T;
}

std::vector<TruthSample> generateTruth(const TrajectorySpec& spec, double rate_hz) {
  const Profile prof = buildProfile(spec);
  const double dt = 1.0 / rate_hz;
  const int n = int(std::floor(prof.total() * rate_hz)) + 1;

  // 4-point Gauss-Legendre nodes on [0, 1].
  static const double gx[4] = {0.069431844202973712, 0.33000947820757187, 0.66999052179242813,
                               0.93056815579702629};
  static const double gw[4] = {0.1739274225687269, 0.3260725774312731, 0.3260725774312731,
                               0.1739274225687269};

  std::vector<TruthSample> out;
  out.reserve(n);
  Vec3 pos(0.0, 0.0, spec.altitude);
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    double s, ds, psi, dpsi;
    prof.speedHeading(t, &s, &ds, &psi, &dpsi);

    TruthSample ts;
    ts.t = t;
    ts.position = pos;
    ts.velocity = Vec3(s * std::cos(psi), s * std::sin(psi), 0.0);
    ts.accel = Vec3(ds * std::cos(psi) - s * dpsi * std::sin(psi),
                    ds * std::sin(psi) + s * dpsi * std::cos(psi), 0.0);
    ts.yaw = psi;
    ts.yaw_rate = dpsi;
    out.push_back(ts);

    // Advance position by quadrature over [t, t + dt].
    Vec3 dp = Vec3::Zero();
    for (int q = 0; q < 4; ++q) {
      double sq, dsq, pq, dpq;
      prof.speedHeading(t + gx[q] * dt, &sq, &dsq, &pq, &dpq);
      dp += gw[q] * Vec3(sq * std::cos(pq), sq * std::sin(pq), 0.0);
    }
    pos += dp * dt;
  }
  return out;
}

double pathLength(const std::vector<TruthSample>& truth) {
  double len = 0.0;
  for (size_t i = 1; i < truth.size(); ++i)
    len += (truth[i].position - truth[i - 1].position).norm();
  return len;
}

}  // namespace tio
