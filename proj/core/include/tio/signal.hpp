#pragma once

#include <stdexcept>
#include <vector>

#include "tio/geometry.hpp"

namespace tio {

struct ImuSample {
  double t = 0.0;   // seconds
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2
};

struct NonIntegerDecimation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Direct-form-I IIR section, one scalar channel.
/// y[n] = B[0] x[n] + B[1] x[n-1] + ... - A[1] y[n-1] - ...
/// State is primed with the first sample so a stationary stream passes
/// through without a startup transient.
class IirFilter {
 public:
  IirFilter(std::vector<double> b, std::vector<double> a);

  double step(double x);
  void reset();

  double dcGain() const;

  // |H(e^{j 2 pi f / fs})|
  double magnitudeAt(double freq_hz, double sample_rate_hz) const;

  const std::vector<double>& b() const { return b_; }
  const std::vector<double>& a() const { return a_; }

 private:
  std::vector<double> b_, a_;
  std::vector<double> xhist_, yhist_;
  bool primed_ = false;
};

/// Coefficients from the onboard 50 Hz Chebyshev Type II design.
IirFilter defaultImuPrefilter();

/// Filters all six IMU axes independently and keeps every `factor`-th sample.
/// Timestamps of kept samples are preserved.
std::vector<ImuSample> filterAndDownsample(const std::vector<ImuSample>& stream,
                                           double input_rate_hz, double output_rate_hz,
                                           const std::vector<double>& b,
                                           const std::vector<double>& a);

/// Streaming equivalent of filterAndDownsample for online use.
class ImuConditioner {
 public:
  ImuConditioner(int decimation, std::vector<double> b, std::vector<double> a,
                 bool filter_enabled = true);

  // Returns true when an output sample is produced (written to `out`).
  bool push(const ImuSample& in, ImuSample& out);

 private:
  int decimation_;
  int count_ = 0;
  bool filter_enabled_;
  std::vector<IirFilter> axes_;  // gx gy gz ax ay az
};

/// Constant-velocity Kalman filter over (altitude, altitude rate) with a
/// chi-square innovation gate rejecting LRF reflectivity spikes.
class LrfGatedFilter {
 public:
  struct Params {
    double sigma_acc = 2.0;   // process noise, m/s^2 * sqrt(Hz) equivalent
    double sigma_z = 0.05;    // measurement std, m
    double gate = 9.21;       // squared-Mahalanobis threshold (chi2, 1 dof, 99%)
  };

  LrfGatedFilter() = default;
  explicit LrfGatedFilter(const Params& p) : p_(p) {}

  struct Result {
    bool accepted = false;
    double altitude = 0.0;
    double rate = 0.0;
  };

  // Predict over dt, then gate-and-update with altitude measurement z.
  Result update(double z, double dt);

  bool initialized() const { return initialized_; }
  Eigen::Vector2d state() const { return x_; }
  Eigen::Matrix2d covariance() const { return P_; }

 private:
  Params p_;
  bool initialized_ = false;
  Eigen::Vector2d x_ = Eigen::Vector2d::Zero();
  Eigen::Matrix2d P_ = Eigen::Matrix2d::Zero();
};

}  // namespace tio
