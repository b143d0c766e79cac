#include "tio/baro_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tio/signal.hpp"

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
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }
};

IirFilter butterworthLowpass(double cutoff_hz, double sample_rate_hz) {
  const double c = 1.0 / std::tan(M_PI * cutoff_hz / sample_rate_hz);
  const double s2 = std::sqrt(2.0);
  const double a0 = 1.0 + s2 * c + c * c;
  std::vector<double> b = {1.0 / a0, 2.0 / a0, 1.0 / a0};
  std::vector<double> a = {1.0, 2.0 * (1.0 - c * c) / a0, (1.0 - s2 * c + c * c) / a0};
  return IirFilter(b, a);
}

double speedOf(const Eigen::VectorXd& features) {
  return features.segment<3>(5).norm();  // body velocity channels
}

}  // namespace

void saveBaroLog(const std::string& path, const BaroLog& log) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open baro log for writing: " + path);
  f.precision(12);
  for (const auto& r : log) {
    f << r.t;
    for (int i = 0; i < 11; ++i) f << ' ' << r.features(i);
    f << ' ' << r.raw_baro << ' ' << r.truth_altitude << '\n';
  }
}

BaroLog loadBaroLog(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open baro log: " + path);
  BaroLog log;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    BaroRecord r;
    ss >> r.t;
    for (int i = 0; i < 11; ++i) ss >> r.features(i);
    ss >> r.raw_baro >> r.truth_altitude;
    if (!ss) throw std::runtime_error("malformed baro log line: " + line);
    log.push_back(r);
  }
  return log;
}

Eigen::Matrix<double, 11, 1> baroFeatureVector(double roll, double pitch, const Vec3& accel_body,
                                               const Vec3& vel_body) {
  Eigen::Matrix<double, 11, 1> x;
  x << roll, pitch, accel_body, vel_body, vel_body.cwiseProduct(vel_body);
  return x;
}

BaroSequence buildSequence(const BaroLog& log, double sample_rate_hz, int align_samples) {
  BaroSequence seq;
  const int n = int(log.size());
  seq.features.resize(n, 11);
  seq.target.resize(n);
  IirFilter lp = butterworthLowpass(1.0, sample_rate_hz);
  for (int i = 0; i < n; ++i) {
    seq.features.row(i) = log[i].features.transpose();
    seq.target(i) = lp.step(log[i].raw_baro) - log[i].truth_altitude;
  }
  const int na = std::min(align_samples, n);
  if (na > 0) {
    const double bias = seq.target.head(na).mean();
    seq.target.array() -= bias;
  }
  return seq;
}

// ---------------------------------------------------------------------------

double PolyBaroModel::predict(const Eigen::VectorXd& features) const {
  const double v = speedOf(features);
  return c(0) + c(1) * v + c(2) * v * v;
}

PolyBaroModel fitPolyBaro(const std::vector<BaroSequence>& train) {
  int64_t n = 0;
  for (const auto& s : train) n += s.target.size();
  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd y(n);
  int64_t k = 0;
  for (const auto& s : train)
    for (int i = 0; i < s.target.size(); ++i, ++k) {
      const double v = speedOf(s.features.row(i).transpose());
      A.row(k) << 1.0, v, v * v;
      y(k) = s.target(i);
    }
  PolyBaroModel m;
  Eigen::Matrix3d N = A.transpose() * A;
  // Collinear designs (e.g. single-speed data) get a ridge and a flag.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(N);
  if (svd.singularValues()(2) < 1e-9 * svd.singularValues()(0)) {
    m.degenerate = true;
    N += 1e-6 * double(n) * Eigen::Matrix3d::Identity();
  }
  m.c = N.ldlt().solve(A.transpose() * y);
  return m;
}

// ---------------------------------------------------------------------------

MlpBaroModel::MlpBaroModel(int input_dim, int hidden) : in_(input_dim), h_(hidden) {
  // W1 (h x in) + b1 + W2 (h x h) + b2 + W3 (2 x h) + b3
  theta_ = Eigen::VectorXd::Zero(h_ * in_ + h_ + h_ * h_ + h_ + 2 * h_ + 2);
  norm_mean_ = Eigen::VectorXd::Zero(in_);
  norm_scale_ = Eigen::VectorXd::Ones(in_);
}

void MlpBaroModel::initRandom(uint64_t seed, double scale) {
  Rng rng(seed);
  for (int i = 0; i < theta_.size(); ++i) theta_(i) = scale * (2.0 * rng.uniform() - 1.0);
}

void MlpBaroModel::setNormalization(const Eigen::VectorXd& mean, const Eigen::VectorXd& scale) {
  norm_mean_ = mean;
  norm_scale_ = scale;
}

void MlpBaroModel::predict(const Eigen::VectorXd& features, double* y_hat,
                           double* log_var) const {
  const double* p = theta_.data();
  Eigen::Map<const Eigen::MatrixXd> W1(p, h_, in_);
  Eigen::Map<const Eigen::VectorXd> b1(p + h_ * in_, h_);
  Eigen::Map<const Eigen::MatrixXd> W2(p + h_ * in_ + h_, h_, h_);
  Eigen::Map<const Eigen::VectorXd> b2(p + h_ * in_ + h_ + h_ * h_, h_);
  Eigen::Map<const Eigen::MatrixXd> W3(p + h_ * in_ + 2 * h_ + h_ * h_, 2, h_);
  Eigen::Map<const Eigen::VectorXd> b3(p + h_ * in_ + 2 * h_ + h_ * h_ + 2 * h_, 2);

  const Eigen::VectorXd x = (features - norm_mean_).cwiseQuotient(norm_scale_);
  const Eigen::VectorXd a1 = (W1 * x + b1).array().tanh();
  const Eigen::VectorXd a2 = (W2 * a1 + b2).array().tanh();
  const Eigen::Vector2d out = W3 * a2 + b3;
  if (y_hat) *y_hat = out(0);
  if (log_var) *log_var = out(1);
}

double MlpBaroModel::lossAndGradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     Eigen::VectorXd* grad) const {
  const int B = int(X.cols());
  const double* p = theta_.data();
  Eigen::Map<const Eigen::MatrixXd> W1(p, h_, in_);
  Eigen::Map<const Eigen::VectorXd> b1(p + h_ * in_, h_);
  Eigen::Map<const Eigen::MatrixXd> W2(p + h_ * in_ + h_, h_, h_);
  Eigen::Map<const Eigen::VectorXd> b2(p + h_ * in_ + h_ + h_ * h_, h_);
  Eigen::Map<const Eigen::MatrixXd> W3(p + h_ * in_ + 2 * h_ + h_ * h_, 2, h_);
  Eigen::Map<const Eigen::VectorXd> b3(p + h_ * in_ + 2 * h_ + h_ * h_ + 2 * h_, 2);

  Eigen::MatrixXd Xn = (X.colwise() - norm_mean_).array().colwise() / norm_scale_.array();
  const Eigen::MatrixXd a1 = ((W1 * Xn).colwise() + b1).array().tanh();
  const Eigen::MatrixXd a2 = ((W2 * a1).colwise() + b2).array().tanh();
  const Eigen::MatrixXd out = (W3 * a2).colwise() + b3;  // rows: y_hat, log_var

  Eigen::VectorXd d_yh, d_lv;
  const double loss = focalGnll(y, out.row(0).transpose(), out.row(1).transpose(), 0.0,
                                grad ? &d_yh : nullptr, grad ? &d_lv : nullptr);
  if (!grad) return loss;

  Eigen::MatrixXd d_out(2, B);
  d_out.row(0) = d_yh.transpose();  // focalGnll already returns dL/d y_hat
  d_out.row(1) = d_lv.transpose();

  grad->setZero(theta_.size());
  double* g = grad->data();
  Eigen::Map<Eigen::MatrixXd> gW1(g, h_, in_);
  Eigen::Map<Eigen::VectorXd> gb1(g + h_ * in_, h_);
  Eigen::Map<Eigen::MatrixXd> gW2(g + h_ * in_ + h_, h_, h_);
  Eigen::Map<Eigen::VectorXd> gb2(g + h_ * in_ + h_ + h_ * h_, h_);
  Eigen::Map<Eigen::MatrixXd> gW3(g + h_ * in_ + 2 * h_ + h_ * h_, 2, h_);
  Eigen::Map<Eigen::VectorXd> gb3(g + h_ * in_ + 2 * h_ + h_ * h_ + 2 * h_, 2);

  gW3 = d_out * a2.transpose();
  gb3 = d_out.rowwise().sum();
  const Eigen::MatrixXd d_a2 =
      (W3.transpose() * d_out).array() * (1.0 - a2.array().square());
  gW2 = d_a2 * a1.transpose();
  gb2 = d_a2.rowwise().sum();
  const Eigen::MatrixXd d_a1 =
      (W2.transpose() * d_a2).array() * (1.0 - a1.array().square());
  gW1 = d_a1 * Xn.transpose();
  gb1 = d_a1.rowwise().sum();
  return loss;
}

double trainMlpBaro(MlpBaroModel& model, const std::vector<BaroSequence>& train,
                    const std::vector<BaroSequence>& validation, const MlpTrainConfig& cfg) {
  int64_t n = 0;
  const int D = int(train.empty() ? 11 : train[0].features.cols());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(D), var = Eigen::VectorXd::Zero(D);
  for (const auto& s : train) {
    mean += s.features.colwise().sum().transpose();
    n += s.features.rows();
  }
  mean /= double(n);
  for (const auto& s : train)
    var += (s.features.rowwise() - mean.transpose()).array().square().colwise().sum().matrix();
  model.setNormalization(mean, (var / double(n)).cwiseSqrt().cwiseMax(1e-6));

  Eigen::MatrixXd X(D, n);
  Eigen::VectorXd y(n);
  int64_t k = 0;
  for (const auto& s : train)
    for (int i = 0; i < s.target.size(); ++i, ++k) {
      X.col(k) = s.features.row(i).transpose();
      y(k) = s.target(i);
    }

  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(model.parameterCount()), m2 = m1, grad;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  int64_t adam_t = 0;
  Rng rng(cfg.seed);
  Eigen::MatrixXd Xb(D, cfg.batch);
  Eigen::VectorXd yb(cfg.batch);
  const int steps = std::max<int>(1, int(n / cfg.batch));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int s = 0; s < steps; ++s) {
      for (int b = 0; b < cfg.batch; ++b) {
        const int64_t idx = int64_t(rng.below(uint64_t(n)));
        Xb.col(b) = X.col(idx);
        yb(b) = y(idx);
      }
      const double loss = model.lossAndGradient(Xb, yb, &grad);
      if (!std::isfinite(loss)) throw DivergedLoss("baseline network loss diverged");
      ++adam_t;
      m1 = b1 * m1 + (1.0 - b1) * grad;
      m2 = b2 * m2 + (1.0 - b2) * grad.cwiseAbs2();
      const double corr = std::sqrt(1.0 - std::pow(b2, double(adam_t))) /
                          (1.0 - std::pow(b1, double(adam_t)));
      model.params() -= cfg.lr * corr * (m1.array() / (m2.array().sqrt() + eps)).matrix();
    }
  }
  return mlpRmse(model, validation);
}

double polyRmse(const PolyBaroModel& m, const std::vector<BaroSequence>& data) {
  double sq = 0.0;
  int64_t n = 0;
  for (const auto& s : data)
    for (int i = 0; i < s.target.size(); ++i, ++n) {
      const double e = s.target(i) - m.predict(s.features.row(i).transpose());
      sq += e * e;
    }
  return n ? std::sqrt(sq / double(n)) : 0.0;
}

double mlpRmse(const MlpBaroModel& m, const std::vector<BaroSequence>& data) {
  double sq = 0.0;
  int64_t n = 0;
  for (const auto& s : data)
    for (int i = 0; i < s.target.size(); ++i, ++n) {
      double yh = 0.0;
      m.predict(s.features.row(i).transpose(), &yh, nullptr);
      const double e = s.target(i) - yh;
      sq += e * e;
    }
  return n ? std::sqrt(sq / double(n)) : 0.0;
}

std::vector<AblationPoint> dataAblation(const std::vector<BaroSequence>& train,
                                        const std::vector<BaroSequence>& test,
                                        const std::vector<double>& fractions, int repeats,
                                        const GruTrainConfig& cfg, uint64_t seed) {
  std::vector<AblationPoint> curve;
  Rng rng(seed);
  for (double frac : fractions) {
    std::vector<double> rmses;
    const int reps = frac >= 1.0 ? 1 : repeats;
    for (int rep = 0; rep < reps; ++rep) {
      // Contiguous block of the requested fraction from each sequence.
      std::vector<BaroSequence> sub;
      for (const auto& s : train) {
        const int n = int(s.target.size());
        const int len = std::max(2, int(std::lround(frac * n)));
        const int start = len >= n ? 0 : int(rng.below(uint64_t(n - len)));
        BaroSequence ss;
        ss.features = s.features.middleRows(start, len);
        ss.target = s.target.segment(start, len);
        sub.push_back(std::move(ss));
      }
      GruCompensator model(11, 16, 1);  // desk-scale model for the Monte-Carlo curve
      model.initRandom(cfg.seed);
      GruTrainConfig c = cfg;
      trainGru(model, sub, test, c);
      rmses.push_back(sequenceRmse(model, test));
    }
    AblationPoint pt;
    pt.fraction = frac;
    for (double r : rmses) pt.mean_rmse += r;
    pt.mean_rmse /= double(rmses.size());
    for (double r : rmses) pt.std_rmse += (r - pt.mean_rmse) * (r - pt.mean_rmse);
    pt.std_rmse = rmses.size() > 1 ? std::sqrt(pt.std_rmse / double(rmses.size() - 1)) : 0.0;
    curve.push_back(pt);
  }
  return curve;
}

}  // namespace tio
