#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tio/factors.hpp"

namespace tio {

struct DivergedLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Focal Gaussian negative log-likelihood
///   L = 1/(2N) Σ (1 - exp(-e²/2σ²))^γ [log σ² + e²/σ²],  e = y - ŷ.
/// γ=0 is the plain Gaussian NLL. Optional analytic gradients w.r.t. ŷ
/// and log σ².
double focalGnll(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat,
                 const Eigen::VectorXd& log_var, double gamma,
                 Eigen::VectorXd* d_y_hat = nullptr, Eigen::VectorXd* d_log_var = nullptr);

/// Stacked gated-recurrent-unit regressor with a scalar correction head and
/// a log-variance head. Gate layout per layer follows the common
/// convention: rows [reset; update; candidate], two bias vectors per layer,
///   r = σ(W_ir x + b_ir + W_hr h + b_hr)
///   z = σ(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
///   h' = (1 - z) ⊙ n + z ⊙ h
/// All parameters live in one flat vector; heads read the top layer.
class GruCompensator {
 public:
  GruCompensator(int input_dim = 11, int hidden = 128, int layers = 3);

  int inputDim() const { return in_; }
  int hiddenDim() const { return h_; }
  int numLayers() const { return l_; }
  int parameterCount() const { return int(theta_.size()); }

  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }

  void initRandom(uint64_t seed, double scale = 0.08);
  void setNormalization(const Eigen::VectorXd& mean, const Eigen::VectorXd& scale);
  const Eigen::VectorXd& normMean() const { return norm_mean_; }
  const Eigen::VectorXd& normScale() const { return norm_scale_; }

  struct Carry {
    std::vector<Eigen::VectorXd> h;  // one hidden vector per layer
  };
  Carry makeCarry() const;

  /// One streaming step; the carry is advanced in place.
  void step(const Eigen::VectorXd& x, Carry& carry, double* y_hat, double* log_var) const;

  /// Whole-sequence forward (rows of X are time steps, raw units).
  void forward(const Eigen::MatrixXd& X, Eigen::VectorXd* y_hat,
               Eigen::VectorXd* log_var) const;

  /// Batched forward + backward over a minibatch of equal-length
  /// subsequences. `xs[t]` is input_dim x batch (raw units), targets is
  /// seq_len x batch. Returns the focal loss; accumulates dL/dθ into
  /// `grad` (flat layout identical to params()).
  double lossAndGradient(const std::vector<Eigen::MatrixXd>& xs, const Eigen::MatrixXd& targets,
                         double gamma, Eigen::VectorXd* grad) const;

  void save(const std::string& path) const;
  static GruCompensator load(const std::string& path);

 private:
  struct LayerView {
    Eigen::Map<const Eigen::MatrixXd> W_ih, W_hh;
    Eigen::Map<const Eigen::VectorXd> b_ih, b_hh;
  };
  LayerView layer(const Eigen::VectorXd& theta, int l) const;
  struct HeadView {
    Eigen::Map<const Eigen::VectorXd> w_y, w_s;
    double b_y, b_s;
  };
  HeadView heads(const Eigen::VectorXd& theta) const;
  int layerOffset(int l) const;
  int headOffset() const;

  int in_, h_, l_;
  Eigen::VectorXd theta_;
  Eigen::VectorXd norm_mean_, norm_scale_;
};

struct GruTrainConfig {
  int seq_len = 4096;
  int batch = 64;
  int epochs = 7;
  double lr = 1e-3;
  double gamma_max = 1.0;
  int gamma_warmup_epochs = 3;  // γ ramps 0 → gamma_max linearly
  uint64_t seed = 7;
  double grad_clip = 5.0;       // global norm
};

/// One training sequence: rows of `features` are time steps (raw units),
/// `target` is the pressure-error correction in meters.
struct BaroSequence {
  Eigen::MatrixXd features;
  Eigen::VectorXd target;
};

struct GruTrainReport {
  std::vector<double> epoch_loss;
  double validation_rmse = 0.0;
  int steps = 0;
};

/// Adam + BPTT over randomly drawn subsequences. Normalization statistics
/// are computed from the training split and stored in the model.
GruTrainReport trainGru(GruCompensator& model, const std::vector<BaroSequence>& train,
                        const std::vector<BaroSequence>& validation, const GruTrainConfig& cfg);

double sequenceRmse(const GruCompensator& model, const std::vector<BaroSequence>& data);

/// Streaming corrector: z_baro = raw - ŷ, variance from the log-variance
/// head (denormalized to meters²).
class BaroCorrector {
 public:
  explicit BaroCorrector(const GruCompensator& model)
      : model_(&model), carry_(model.makeCarry()) {}
  BaroMeasurement compensate(const Eigen::VectorXd& features, double raw_altitude);
  void reset() { carry_ = model_->makeCarry(); }

 private:
  const GruCompensator* model_;
  GruCompensator::Carry carry_;
};

}  // namespace tio
