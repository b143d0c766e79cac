#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "tio/gru.hpp"

namespace tio {

/// One synchronized record of the pressure-error dataset.
/// Feature layout (11 channels): roll, pitch, body accel (3), body
/// velocity (3), elementwise body velocity squared (3). Yaw is excluded on
/// purpose so corrections generalize across headings.
struct BaroRecord {
  double t = 0.0;
  Eigen::Matrix<double, 11, 1> features = Eigen::Matrix<double, 11, 1>::Zero();
  double raw_baro = 0.0;        // uncorrected altitude, m
  double truth_altitude = 0.0;  // m
};

using BaroLog = std::vector<BaroRecord>;

void saveBaroLog(const std::string& path, const BaroLog& log);
BaroLog loadBaroLog(const std::string& path);

Eigen::Matrix<double, 11, 1> baroFeatureVector(double roll, double pitch, const Vec3& accel_body,
                                               const Vec3& vel_body);

/// Regression target: low-pass-filtered raw altitude (2nd-order
/// Butterworth, 1 Hz cutoff) minus truth, with the static bias removed
/// using the mean of the first `align_samples` samples.
BaroSequence buildSequence(const BaroLog& log, double sample_rate_hz, int align_samples = 50);

// ---------------------------------------------------------------------------
// Speed-quadratic baseline: correction = c0 + c1 |v| + c2 |v|^2.

struct PolyBaroModel {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  bool degenerate = false;  // rank-deficient design, ridge-regularized fit

  double predict(const Eigen::VectorXd& features) const;
};

PolyBaroModel fitPolyBaro(const std::vector<BaroSequence>& train);

// ---------------------------------------------------------------------------
// Small dense network baseline (two tanh layers, width 64), trained with
// the plain Gaussian NLL (focal loss with gamma = 0).

class MlpBaroModel {
 public:
  MlpBaroModel(int input_dim = 11, int hidden = 64);

  int parameterCount() const { return int(theta_.size()); }
  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }
  void initRandom(uint64_t seed, double scale = 0.2);
  void setNormalization(const Eigen::VectorXd& mean, const Eigen::VectorXd& scale);

  void predict(const Eigen::VectorXd& features, double* y_hat, double* log_var) const;
  double lossAndGradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         Eigen::VectorXd* grad) const;

 private:
  int in_, h_;
  Eigen::VectorXd theta_;
  Eigen::VectorXd norm_mean_, norm_scale_;
};

struct MlpTrainConfig {
  int epochs = 30;
  int batch = 256;
  double lr = 1e-3;
  uint64_t seed = 11;
};

double trainMlpBaro(MlpBaroModel& model, const std::vector<BaroSequence>& train,
                    const std::vector<BaroSequence>& validation, const MlpTrainConfig& cfg);

double polyRmse(const PolyBaroModel& m, const std::vector<BaroSequence>& data);
double mlpRmse(const MlpBaroModel& m, const std::vector<BaroSequence>& data);

// ---------------------------------------------------------------------------
// Monte-Carlo data ablation: contiguous training blocks of the given
// fraction, the model retrained per draw, test RMSE aggregated.

struct AblationPoint {
  double fraction = 1.0;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;
};

std::vector<AblationPoint> dataAblation(
    const std::vector<BaroSequence>& train, const std::vector<BaroSequence>& test,
    const std::vector<double>& fractions, int repeats, const GruTrainConfig& cfg,
    uint64_t seed = 123);

}  // namespace tio
