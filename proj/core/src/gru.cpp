#include "tio/gru.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

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
  double uniformSigned() { return 2.0 * uniform() - 1.0; }
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }
};

inline Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& a) {
  return 1.0 / (1.0 + (-a).exp());
}

constexpr uint32_t kMagic = 0x474F4954;  // "TIOG"
constexpr uint32_t kVersion = 1;

void writeU32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
uint32_t readU32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
// Row-major little-endian f32 blob.
void writeBlob(std::ofstream& f, const Eigen::MatrixXd& m) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      const float v = float(m(i, j));
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
}
void readBlob(std::ifstream& f, Eigen::Ref<Eigen::MatrixXd> m) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      float v = 0.0f;
      f.read(reinterpret_cast<char*>(&v), 4);
      m(i, j) = double(v);
    }
}

}  // namespace

double focalGnll(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat,
                 const Eigen::VectorXd& log_var, double gamma, Eigen::VectorXd* d_y_hat,
                 Eigen::VectorXd* d_log_var) {
  const int n = int(y.size());
  const double inv2n = 1.0 / (2.0 * n);
  if (d_y_hat) d_y_hat->setZero(n);
  if (d_log_var) d_log_var->setZero(n);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = y(i) - y_hat(i);
    const double t = log_var(i);
    const double s = std::exp(t);
    const double q = e * e / s;
    const double a = t + q;
    const double ex = std::exp(-0.5 * q);
    const double w = std::max(1.0 - ex, 1e-12);
    const double wg = gamma == 0.0 ? 1.0 : std::pow(w, gamma);
    loss += wg * a * inv2n;
    if (!d_y_hat && !d_log_var) continue;
    const double wg1 = gamma == 0.0 ? 0.0 : gamma * std::pow(w, gamma - 1.0);
    // dw/de = ex * e / s, dw/dt = -ex * q / 2
    const double dL_de = (wg1 * (ex * e / s) * a + wg * (2.0 * e / s)) * inv2n;
    const double dL_dt = (wg1 * (-ex * 0.5 * q) * a + wg * (1.0 - q)) * inv2n;
    if (d_y_hat) (*d_y_hat)(i) = -dL_de;
    if (d_log_var) (*d_log_var)(i) = dL_dt;
  }
  return loss;
}

GruCompensator::GruCompensator(int input_dim, int hidden, int layers)
    : in_(input_dim), h_(hidden), l_(layers) {
  theta_ = Eigen::VectorXd::Zero(headOffset() + 2 * (h_ + 1));
  norm_mean_ = Eigen::VectorXd::Zero(in_);
  norm_scale_ = Eigen::VectorXd::Ones(in_);
}

int GruCompensator::layerOffset(int l) const {
  int off = 0;
  for (int k = 0; k < l; ++k) {
    const int d = k == 0 ? in_ : h_;
    off += 3 * h_ * d + 3 * h_ * h_ + 6 * h_;
  }
  return off;
}

int GruCompensator::headOffset() const { return layerOffset(l_); }

GruCompensator::LayerView GruCompensator::layer(const Eigen::VectorXd& theta, int l) const {
  const int d = l == 0 ? in_ : h_;
  const double* p = theta.data() + layerOffset(l);
  return LayerView{
      Eigen::Map<const Eigen::MatrixXd>(p, 3 * h_, d),
      Eigen::Map<const Eigen::MatrixXd>(p + 3 * h_ * d, 3 * h_, h_),
      Eigen::Map<const Eigen::VectorXd>(p + 3 * h_ * d + 3 * h_ * h_, 3 * h_),
      Eigen::Map<const Eigen::VectorXd>(p + 3 * h_ * d + 3 * h_ * h_ + 3 * h_, 3 * h_)};
}

GruCompensator::HeadView GruCompensator::heads(const Eigen::VectorXd& theta) const {
  const double* p = theta.data() + headOffset();
  return HeadView{Eigen::Map<const Eigen::VectorXd>(p, h_),
                  Eigen::Map<const Eigen::VectorXd>(p + h_ + 1, h_), p[h_], p[2 * h_ + 1]};
}

void GruCompensator::initRandom(uint64_t seed, double scale) {
  Rng rng(seed);
  for (int i = 0; i < theta_.size(); ++i) theta_(i) = scale * rng.uniformSigned();
}

void GruCompensator::setNormalization(const Eigen::VectorXd& mean, const Eigen::VectorXd& scale) {
  norm_mean_ = mean;
  norm_scale_ = scale;
}

GruCompensator::Carry GruCompensator::makeCarry() const {
  Carry c;
  c.h.assign(l_, Eigen::VectorXd::Zero(h_));
  return c;
}

void GruCompensator::step(const Eigen::VectorXd& x, Carry& carry, double* y_hat,
                          double* log_var) const {
  Eigen::VectorXd u = (x - norm_mean_).cwiseQuotient(norm_scale_);
  for (int l = 0; l < l_; ++l) {
    const auto L = layer(theta_, l);
    const Eigen::VectorXd gi = L.W_ih * u + L.b_ih;
    const Eigen::VectorXd gh = L.W_hh * carry.h[l] + L.b_hh;
    const Eigen::ArrayXd r = sigmoid((gi.head(h_) + gh.head(h_)).array());
    const Eigen::ArrayXd z = sigmoid((gi.segment(h_, h_) + gh.segment(h_, h_)).array());
    const Eigen::ArrayXd n =
        (gi.tail(h_).array() + r * gh.tail(h_).array()).tanh();
    carry.h[l] = ((1.0 - z) * n + z * carry.h[l].array()).matrix();
    u = carry.h[l];
  }
  const auto H = heads(theta_);
  if (y_hat) *y_hat = H.w_y.dot(u) + H.b_y;
  if (log_var) *log_var = H.w_s.dot(u) + H.b_s;
}

void GruCompensator::forward(const Eigen::MatrixXd& X, Eigen::VectorXd* y_hat,
                             Eigen::VectorXd* log_var) const {
  const int T = int(X.rows());
  if (y_hat) y_hat->resize(T);
  if (log_var) log_var->resize(T);
  Carry c = makeCarry();
  for (int t = 0; t < T; ++t) {
    double y = 0.0, lv = 0.0;
    step(X.row(t).transpose(), c, &y, &lv);
    if (y_hat) (*y_hat)(t) = y;
    if (log_var) (*log_var)(t) = lv;
  }
}

double GruCompensator::lossAndGradient(const std::vector<Eigen::MatrixXd>& xs,
                                       const Eigen::MatrixXd& targets, double gamma,
                                       Eigen::VectorXd* grad) const {
  const int T = int(xs.size());
  const int B = int(xs.empty() ? 0 : xs[0].cols());
  const int H = h_;

  struct Cache {
    Eigen::MatrixXd h_prev, r, z, n, u_hn, in;
  };
  std::vector<std::vector<Cache>> cache(T, std::vector<Cache>(l_));
  std::vector<Eigen::MatrixXd> h(l_, Eigen::MatrixXd::Zero(H, B));
  Eigen::MatrixXd y_hat(T, B), log_var(T, B);
  Eigen::MatrixXd h_top(H, B);

  const auto HE = heads(theta_);
  for (int t = 0; t < T; ++t) {
    Eigen::MatrixXd u =
        (xs[t].colwise() - norm_mean_).array().colwise() / norm_scale_.array();
    for (int l = 0; l < l_; ++l) {
      const auto L = layer(theta_, l);
      Cache& c = cache[t][l];
      c.in = u;
      c.h_prev = h[l];
      const Eigen::MatrixXd gi = (L.W_ih * u).colwise() + L.b_ih;
      const Eigen::MatrixXd gh = (L.W_hh * h[l]).colwise() + L.b_hh;
      c.r = sigmoid(gi.topRows(H).array() + gh.topRows(H).array());
      c.z = sigmoid(gi.middleRows(H, H).array() + gh.middleRows(H, H).array());
      c.u_hn = gh.bottomRows(H);
      c.n = (gi.bottomRows(H).array() + c.r.array() * c.u_hn.array()).tanh();
      h[l] = ((1.0 - c.z.array()) * c.n.array() + c.z.array() * h[l].array()).matrix();
      u = h[l];
    }
    y_hat.row(t) = (HE.w_y.transpose() * h[l_ - 1]).array() + HE.b_y;
    log_var.row(t) = (HE.w_s.transpose() * h[l_ - 1]).array() + HE.b_s;
    if (t == T - 1) h_top = h[l_ - 1];
  }

  // Flatten for the loss (column-major over the T x B grid is fine: the
  // loss is a mean).
  Eigen::Map<const Eigen::VectorXd> yv(targets.data(), T * B);
  Eigen::Map<const Eigen::VectorXd> yhv(y_hat.data(), T * B);
  Eigen::Map<const Eigen::VectorXd> lvv(log_var.data(), T * B);
  Eigen::VectorXd d_yh, d_lv;
  const double loss = focalGnll(yv, yhv, lvv, gamma, grad ? &d_yh : nullptr,
                                grad ? &d_lv : nullptr);
  if (!grad) return loss;
  if (!std::isfinite(loss)) throw DivergedLoss("focal loss is not finite");

  grad->setZero(theta_.size());
  Eigen::Map<const Eigen::MatrixXd> dY(d_yh.data(), T, B);
  Eigen::Map<const Eigen::MatrixXd> dLv(d_lv.data(), T, B);

  // Mutable views over the flat gradient.
  auto gradLayer = [&](int l) {
    const int d = l == 0 ? in_ : H;
    double* p = grad->data() + layerOffset(l);
    return std::tuple<Eigen::Map<Eigen::MatrixXd>, Eigen::Map<Eigen::MatrixXd>,
                      Eigen::Map<Eigen::VectorXd>, Eigen::Map<Eigen::VectorXd>>(
        Eigen::Map<Eigen::MatrixXd>(p, 3 * H, d),
        Eigen::Map<Eigen::MatrixXd>(p + 3 * H * d, 3 * H, H),
        Eigen::Map<Eigen::VectorXd>(p + 3 * H * d + 3 * H * H, 3 * H),
        Eigen::Map<Eigen::VectorXd>(p + 3 * H * d + 3 * H * H + 3 * H, 3 * H));
  };
  double* ph = grad->data() + headOffset();
  Eigen::Map<Eigen::VectorXd> g_wy(ph, H);
  Eigen::Map<Eigen::VectorXd> g_ws(ph + H + 1, H);
  double& g_by = ph[H];
  double& g_bs = ph[2 * H + 1];

  std::vector<Eigen::MatrixXd> dh_run(l_, Eigen::MatrixXd::Zero(H, B));
  for (int t = T - 1; t >= 0; --t) {
    // Head contributions at step t (h_top of that step is cache[t+1]?.. we
    // recompute it as the next step's layer input or the stored final).
    const Eigen::MatrixXd& htop =
        t + 1 < T ? cache[t + 1][l_ - 1].h_prev : h_top;
    g_wy += htop * dY.row(t).transpose();
    g_ws += htop * dLv.row(t).transpose();
    g_by += dY.row(t).sum();
    g_bs += dLv.row(t).sum();
    Eigen::MatrixXd from_above =
        HE.w_y * dY.row(t) + HE.w_s * dLv.row(t);  // H x B

    for (int l = l_ - 1; l >= 0; --l) {
      const Cache& c = cache[t][l];
      const auto L = layer(theta_, l);
      const Eigen::ArrayXXd dhp = (dh_run[l] + from_above).array();
      const Eigen::ArrayXXd dn = dhp * (1.0 - c.z.array());
      const Eigen::ArrayXXd dz = dhp * (c.h_prev.array() - c.n.array());
      const Eigen::ArrayXXd da_n = dn * (1.0 - c.n.array().square());
      const Eigen::ArrayXXd dr = da_n * c.u_hn.array();
      const Eigen::ArrayXXd du = da_n * c.r.array();
      const Eigen::ArrayXXd da_r = dr * c.r.array() * (1.0 - c.r.array());
      const Eigen::ArrayXXd da_z = dz * c.z.array() * (1.0 - c.z.array());

      Eigen::MatrixXd gates_i(3 * H, B), gates_h(3 * H, B);
      gates_i.topRows(H) = da_r.matrix();
      gates_i.middleRows(H, H) = da_z.matrix();
      gates_i.bottomRows(H) = da_n.matrix();
      gates_h.topRows(H) = da_r.matrix();
      gates_h.middleRows(H, H) = da_z.matrix();
      gates_h.bottomRows(H) = du.matrix();

      auto [gW_ih, gW_hh, gb_ih, gb_hh] = gradLayer(l);
      gW_ih += gates_i * c.in.transpose();
      gW_hh += gates_h * c.h_prev.transpose();
      gb_ih += gates_i.rowwise().sum();
      gb_hh += gates_h.rowwise().sum();

      const Eigen::MatrixXd d_in = L.W_ih.transpose() * gates_i;
      dh_run[l] = (dhp * c.z.array()).matrix() + L.W_hh.transpose() * gates_h;
      if (l > 0)
        from_above = d_in;
      else
        from_above.setZero(H, B);  // input gradient not needed
    }
  }
  return loss;
}

void GruCompensator::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file for writing: " + path);
  writeU32(f, kMagic);
  writeU32(f, kVersion);
  writeU32(f, uint32_t(in_));
  writeU32(f, uint32_t(h_));
  writeU32(f, uint32_t(l_));
  for (int l = 0; l < l_; ++l) {
    const auto L = layer(theta_, l);
    writeBlob(f, L.W_ih);
    writeBlob(f, L.W_hh);
    writeBlob(f, L.b_ih);
    writeBlob(f, L.b_hh);
  }
  const auto H = heads(theta_);
  writeBlob(f, H.w_y);
  writeBlob(f, Eigen::MatrixXd::Constant(1, 1, H.b_y));
  writeBlob(f, H.w_s);
  writeBlob(f, Eigen::MatrixXd::Constant(1, 1, H.b_s));
  writeBlob(f, norm_mean_);
  writeBlob(f, norm_scale_);
}

GruCompensator GruCompensator::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file: " + path);
  if (readU32(f) != kMagic) throw std::runtime_error("bad model magic: " + path);
  if (readU32(f) != kVersion) throw std::runtime_error("unsupported model version: " + path);
  const int in = int(readU32(f));
  const int h = int(readU32(f));
  const int l = int(readU32(f));
  GruCompensator m(in, h, l);
  for (int k = 0; k < l; ++k) {
    const int d = k == 0 ? in : h;
    double* p = m.theta_.data() + m.layerOffset(k);
    Eigen::Map<Eigen::MatrixXd> W_ih(p, 3 * h, d);
    Eigen::Map<Eigen::MatrixXd> W_hh(p + 3 * h * d, 3 * h, h);
    Eigen::Map<Eigen::VectorXd> b_ih(p + 3 * h * d + 3 * h * h, 3 * h);
    Eigen::Map<Eigen::VectorXd> b_hh(p + 3 * h * d + 3 * h * h + 3 * h, 3 * h);
    readBlob(f, W_ih);
    readBlob(f, W_hh);
    readBlob(f, b_ih);
    readBlob(f, b_hh);
  }
  double* p = m.theta_.data() + m.headOffset();
  Eigen::Map<Eigen::VectorXd> w_y(p, h);
  Eigen::Map<Eigen::VectorXd> w_s(p + h + 1, h);
  Eigen::MatrixXd b(1, 1);
  readBlob(f, w_y);
  readBlob(f, b);
  p[h] = b(0, 0);
  readBlob(f, w_s);
  readBlob(f, b);
  p[2 * h + 1] = b(0, 0);
  readBlob(f, m.norm_mean_);
  readBlob(f, m.norm_scale_);
  if (!f) throw std::runtime_error("truncated model file: " + path);
  return m;
}

GruTrainReport trainGru(GruCompensator& model, const std::vector<BaroSequence>& train,
                        const std::vector<BaroSequence>& validation,
                        const GruTrainConfig& cfg) {
  GruTrainReport report;
  if (train.empty()) return report;
  const int D = model.inputDim();

  // Global normalization statistics from the training split.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(D), var = Eigen::VectorXd::Zero(D);
  int64_t count = 0;
  for (const auto& s : train) {
    mean += s.features.colwise().sum().transpose();
    count += s.features.rows();
  }
  mean /= double(count);
  for (const auto& s : train)
    var += (s.features.rowwise() - mean.transpose()).array().square().colwise().sum().matrix();
  Eigen::VectorXd scale = (var / double(count)).cwiseSqrt().cwiseMax(1e-6);
  model.setNormalization(mean, scale);

  int min_len = int(train[0].target.size());
  for (const auto& s : train) min_len = std::min<int>(min_len, int(s.target.size()));
  const int L = std::min(cfg.seq_len, min_len);
  const int B = cfg.batch;

  // One epoch visits (in expectation) every length-L window once.
  int64_t windows = 0;
  for (const auto& s : train) windows += s.target.size() - L + 1;
  const int steps_per_epoch = std::max<int>(1, int(windows / B));

  // Adam state over the flat parameter vector.
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(model.parameterCount());
  Eigen::VectorXd m2 = m1;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  int64_t adam_t = 0;
  Rng rng(cfg.seed);

  std::vector<Eigen::MatrixXd> xs(L, Eigen::MatrixXd(D, B));
  Eigen::MatrixXd targets(L, B);
  Eigen::VectorXd grad;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double gamma =
        cfg.gamma_warmup_epochs > 0
            ? cfg.gamma_max * std::min(1.0, double(epoch) / cfg.gamma_warmup_epochs)
            : cfg.gamma_max;
    double epoch_loss = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      for (int b = 0; b < B; ++b) {
        const auto& s = train[rng.below(train.size())];
        const int start = int(rng.below(uint64_t(s.target.size()) - L + 1));
        for (int t = 0; t < L; ++t) {
          xs[t].col(b) = s.features.row(start + t).transpose();
          targets(t, b) = s.target(start + t);
        }
      }
      const double loss = model.lossAndGradient(xs, targets, gamma, &grad);
      if (!std::isfinite(loss)) throw DivergedLoss("training loss diverged");
      epoch_loss += loss;

      const double gn = grad.norm();
      if (gn > cfg.grad_clip) grad *= cfg.grad_clip / gn;
      ++adam_t;
      m1 = b1 * m1 + (1.0 - b1) * grad;
      m2 = b2 * m2 + (1.0 - b2) * grad.cwiseAbs2();
      const double corr = std::sqrt(1.0 - std::pow(b2, double(adam_t))) /
                          (1.0 - std::pow(b1, double(adam_t)));
      model.params() -=
          cfg.lr * corr * (m1.array() / (m2.array().sqrt() + eps)).matrix();
      ++report.steps;
    }
    report.epoch_loss.push_back(epoch_loss / steps_per_epoch);
  }
  report.validation_rmse = sequenceRmse(model, validation);
  return report;
}

double sequenceRmse(const GruCompensator& model, const std::vector<BaroSequence>& data) {
  double sq = 0.0;
  int64_t n = 0;
  for (const auto& s : data) {
    Eigen::VectorXd y_hat;
    model.forward(s.features, &y_hat, nullptr);
    sq += (s.target - y_hat).squaredNorm();
    n += s.target.size();
  }
  return n ? std::sqrt(sq / double(n)) : 0.0;
}

BaroMeasurement BaroCorrector::compensate(const Eigen::VectorXd& features,
                                          double raw_altitude) {
  double y = 0.0, lv = 0.0;
  model_->step(features, carry_, &y, &lv);
  BaroMeasurement m;
  m.z_baro = raw_altitude - y;
  m.sigma2 = std::exp(lv);
  return m;
}

}  // namespace tio
