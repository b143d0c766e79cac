#include "tio/signal.hpp"

#include <cmath>
#include <complex>
#include <numeric>

namespace tio {

IirFilter::IirFilter(std::vector<double> b, std::vector<double> a)
    : b_(std::move(b)), a_(std::move(a)) {
  if (a_.empty() || a_[0] != 1.0)
    throw std::invalid_argument("IirFilter: A[0] must be 1");
  if (b_.empty()) throw std::invalid_argument("IirFilter: empty B");
  xhist_.assign(b_.size(), 0.0);
  yhist_.assign(a_.size(), 0.0);
}

void IirFilter::reset() {
  std::fill(xhist_.begin(), xhist_.end(), 0.0);
  std::fill(yhist_.begin(), yhist_.end(), 0.0);
  primed_ = false;
}

double IirFilter::step(double x) {
  if (!primed_) {
    // Prime history as if x had been held forever; with unit DC gain the
    // associated steady-state output is x itself.
    const double g = dcGain();
    std::fill(xhist_.begin(), xhist_.end(), x);
    std::fill(yhist_.begin(), yhist_.end(), g * x);
    primed_ = true;
  }
  for (size_t i = xhist_.size() - 1; i > 0; --i) xhist_[i] = xhist_[i - 1];
  xhist_[0] = x;
  double y = 0.0;
  for (size_t i = 0; i < b_.size(); ++i) y += b_[i] * xhist_[i];
  for (size_t i = 1; i < a_.size(); ++i) y -= a_[i] * yhist_[i - 1];
  for (size_t i = yhist_.size() - 1; i > 0; --i) yhist_[i] = yhist_[i - 1];
  yhist_[0] = y;
  return y;
}

double IirFilter::dcGain() const {
  const double sb = std::accumulate(b_.begin(), b_.end(), 0.0);
  const double sa = std::accumulate(a_.begin(), a_.end(), 0.0);
  return sb / sa;
}

double IirFilter::magnitudeAt(double freq_hz, double sample_rate_hz) const {
  const double w = 2.0 * M_PI * freq_hz / sample_rate_hz;
  const std::complex<double> z = std::polar(1.0, -w);
  std::complex<double> num(0.0, 0.0), den(0.0, 0.0);
  std::complex<double> zk(1.0, 0.0);
  for (size_t i = 0; i < std::max(b_.size(), a_.size()); ++i) {
    if (i < b_.size()) num += b_[i] * zk;
    if (i < a_.size()) den += a_[i] * zk;
    zk *= z;
  }
  return std::abs(num / den);
}

IirFilter defaultImuPrefilter() {
  return IirFilter({0.01447789, 0.01447789}, {1.0, -0.97104422});
}

std::vector<ImuSample> filterAndDownsample(const std::vector<ImuSample>& stream,
                                           double input_rate_hz, double output_rate_hz,
                                           const std::vector<double>& b,
                                           const std::vector<double>& a) {
  const double ratio = input_rate_hz / output_rate_hz;
  const int factor = static_cast<int>(std::lround(ratio));
  if (std::abs(ratio - factor) > 1e-9 || factor < 1)
    throw NonIntegerDecimation("input rate not an integer multiple of output rate");
  ImuConditioner cond(factor, b, a);
  std::vector<ImuSample> out;
  out.reserve(stream.size() / factor + 1);
  ImuSample s;
  for (const ImuSample& in : stream)
    if (cond.push(in, s)) out.push_back(s);
  return out;
}

ImuConditioner::ImuConditioner(int decimation, std::vector<double> b, std::vector<double> a,
                               bool filter_enabled)
    : decimation_(decimation), filter_enabled_(filter_enabled) {
  if (decimation_ < 1) throw NonIntegerDecimation("decimation factor must be >= 1");
  for (int i = 0; i < 6; ++i) axes_.emplace_back(b, a);
}

bool ImuConditioner::push(const ImuSample& in, ImuSample& out) {
  ImuSample f = in;
  if (filter_enabled_) {
    for (int i = 0; i < 3; ++i) f.gyro[i] = axes_[i].step(in.gyro[i]);
    for (int i = 0; i < 3; ++i) f.accel[i] = axes_[3 + i].step(in.accel[i]);
  }
  const bool emit = (count_ % decimation_) == 0;
  ++count_;
  if (emit) out = f;
  return emit;
}

LrfGatedFilter::Result LrfGatedFilter::update(double z, double dt) {
  Result res;
  if (!initialized_) {
    x_ << z, 0.0;
    P_ << p_.sigma_z * p_.sigma_z, 0.0, 0.0, 25.0;  // rate initially unknown
    initialized_ = true;
    res.accepted = true;
    res.altitude = z;
    res.rate = 0.0;
    return res;
  }
  if (dt <= 0.0) throw std::invalid_argument("LrfGatedFilter: dt must be > 0");

  Eigen::Matrix2d F;
  F << 1.0, dt, 0.0, 1.0;
  // White-acceleration process noise.
  const double q = p_.sigma_acc * p_.sigma_acc;
  Eigen::Matrix2d Q;
  Q << q * dt * dt * dt / 3.0, q * dt * dt / 2.0, q * dt * dt / 2.0, q * dt;
  x_ = F * x_;
  P_ = F * P_ * F.transpose() + Q;

  const double r = p_.sigma_z * p_.sigma_z;
  const double innov = z - x_(0);
  const double s = P_(0, 0) + r;
  const double mahal2 = innov * innov / s;
  if (mahal2 <= p_.gate) {
    Eigen::Vector2d k = P_.col(0) / s;
    x_ += k * innov;
    Eigen::Matrix2d ikh = Eigen::Matrix2d::Identity();
    ikh.col(0) -= k;
    P_ = ikh * P_ * ikh.transpose() + k * r * k.transpose();  // Joseph form
    res.accepted = true;
  }
  P_ = 0.5 * (P_ + P_.transpose());
  res.altitude = x_(0);
  res.rate = x_(1);
  return res;
}

}  // namespace tio
