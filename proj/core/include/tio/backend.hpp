#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "tio/factors.hpp"
#include "tio/feature_filter.hpp"
#include "tio/frontend.hpp"
#include "tio/initializer.hpp"
#include "tio/marginalization.hpp"
#include "tio/preintegration.hpp"
#include "tio/solver.hpp"

namespace tio {

enum class MotionClass { None, ConstantVelocity, ZeroVelocity };

struct BackendParams {
  int keyframe_interval = 20;
  int lag_keyframes = 5;
  LmParams lm;
  double huber_delta = 1.345;
  double bearing_sigma = 2e-3;      // projection residual std, tangent-plane units
  double depth_prior_sigma = 0.02;  // LRF range noise [m]; mapped to inverse
                                    // depth as sigma_rho = sigma * rho^2
  double attitude_sigma = 0.05;
  double zupt_sigma = 0.02;         // m/s
  double grav_att_sigma = 0.05;
  double bias_walk_dt_floor = 1e-3;
  double relin_rot = 1e-3;          // rad
  double relin_trans = 1e-3;        // m
  double relin_rho = 1e-4;          // 1/m
  ImuNoiseParams imu_noise;
  Pose3 T_bc;
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  FilterParams filter;
  bool triangulation_filter = true;  // false: admit ripe tracks at nominal depth
  double nominal_rho = 1.0 / 15.0;  // fallback inverse depth
  // Zero-velocity / constant-velocity detector.
  double zv_window = 1.0;              // s of IMU statistics
  double zv_accel_std = 0.08;          // m/s^2
  double zv_gyro_std = 0.02;           // rad/s
  double zv_flow_px = 1.0;             // mean |flow| for the zero-velocity case
  // Gauge prior on the first keyframe.
  double prior_pos_info = 1e8;
  double prior_yaw_info = 1e8;
  double prior_rp_info = 1e6;
  double prior_vel_info = 1e6;
  double prior_bias_info = 1e4;
  double baro_offset_prior_sigma = 5.0;  // initial datum offset uncertainty, m
};

struct FrameInput {
  double t = 0.0;
  std::vector<Observation> observations;
  std::optional<double> lrf_depth;        // gated LRF range along the camera axis
  std::optional<BaroMeasurement> baro;
  std::optional<Vec3> attitude_ref;       // heading reference, body frame
  double flow_px = 0.0;                   // mean tracked displacement, px
};

struct FrameOutput {
  int64_t frame_id = -1;
  double t = 0.0;
  Pose3 pose;
  Vec3 velocity = Vec3::Zero();
  ImuBias bias;
  double baro_offset = 0.0;
  int lm_iterations = 0;
  int relinearized = 0;
  double cost = 0.0;
  double ms_assemble = 0.0;
  double ms_solve = 0.0;
  double ms_cost = 0.0;
  MotionClass motion = MotionClass::None;
};

/// Fixed-lag smoother over a hybrid keyframe window: a full 15-dof state
/// per keyframe, 9-dof states for the 20 intermediate frames, scalar
/// inverse depths for features, and one global barometer datum offset.
class Backend {
 public:
  explicit Backend(const BackendParams& params);

  /// Seed the window from a stationary initialization.
  void initialize(const InitResult& init, double t, const Vec3& position = Vec3::Zero());

  /// Conditioned (filtered + decimated) IMU stream, time-ordered.
  void addImu(const ImuSample& s);

  /// Close the running preintegration at the frame stamp, insert the new
  /// state, run the optimizer, and marginalize if the window overflows.
  FrameOutput addFrame(const FrameInput& in);

  bool initialized() const { return initialized_; }
  int numKeyframes() const;
  int numFrames() const { return int(frames_.size()); }
  int numFeatures() const { return int(features_.size()); }
  const BackendParams& params() const { return p_; }

  /// Expose the detector for direct testing.
  MotionClass classifyMotion(double flow_px) const;

  struct SolveStats {
    int lm_iterations = 0;
    int relinearized_vars = 0;
    int jacobian_evals = 0;
    double cost = 0.0;
    double ms_assemble = 0.0;
    double ms_solve = 0.0;
    double ms_cost = 0.0;
  };

 private:
  struct Frame {
    NavState x;
    int64_t id = -1;
  };

  // ---- cached linearization (selective relinearization) ----
  enum class VarKind { Nav, Bias, BaroOffset, Feature };
  struct VarKey {
    VarKind kind;
    int64_t id;
    bool operator<(const VarKey& o) const {
      return kind != o.kind ? kind < o.kind : id < o.id;
    }
  };
  // One whitened Jacobian block plus the variable value it was linearized
  // at; the assembly adds J * (current ⊟ lin) to the cached residual so
  // unmarked variables keep stale Jacobians but exact first-order residuals.
  struct LinBlock {
    VarKey key;
    Eigen::MatrixXd J;
    NavState lin_nav;       // Nav kind
    Eigen::VectorXd lin_vec;  // Bias / BaroOffset / Feature kinds
  };
  struct Linearized {
    bool valid = false;
    std::vector<LinBlock> blocks;
    Eigen::VectorXd r;  // whitened residual at the linearization point
  };

  struct PreintFactorG {
    int64_t i = -1, j = -1;       // consecutive frame ids
    int64_t bias_kf = -1;         // keyframe owning the shared bias
    PreintegratedImu pim;
    Linearized cache;
  };
  struct ProjFactorG {
    int64_t feature = -1;
    int64_t obs_frame = -1;
    Vec3 s_obs = Vec3::UnitZ();
    Linearized cache;
  };
  struct BaroFactorG {
    int64_t frame = -1;
    BaroMeasurement m;
    Linearized cache;
  };
  struct AttFactorG {
    int64_t frame = -1;
    Vec3 v_ref = Vec3::UnitX();
    Linearized cache;
  };
  struct ZupFactorG {
    int64_t frame = -1;
    Linearized cache;
  };
  struct GravAttFactorG {
    int64_t frame = -1;
    Vec3 accel_dir = Vec3::UnitZ();
    Linearized cache;
  };
  struct DepthPriorG {
    int64_t feature = -1;
    double rho_lrf = 0.0;
    double sigma = 1e-3;  // LRF range noise propagated into 1/m units
    Linearized cache;
  };
  struct BiasWalkG {
    int64_t kf_i = -1, kf_j = -1;
    double dt = 1.0;
    Linearized cache;
  };
  // Dense Gaussian prior over [nav(9) (+bias 6 if keyframe) (+baro offset 1)]
  // of one frame, in the tangent space of the stored linearization point.
  struct StatePriorG {
    int64_t frame = -1;
    bool has_bias = false;
    bool has_baro_offset = false;
    Eigen::MatrixXd H;      // information
    Eigen::MatrixXd sqrtH;  // whitener
    Eigen::VectorXd mu;
    NavState lin;
    ImuBias bias_lin;
    double baro_offset_lin = 0.0;
    Linearized cache;
  };

  struct Track {
    FeatureState state;
    std::vector<ProjFactorG> obs;  // admitted observations
  };

  // ---- assembly ----
  struct Layout {
    std::map<int64_t, int> frame_offset;  // tangent offset of each frame
    std::map<int64_t, int> bias_offset;   // keyframe bias offset
    int baro_offset_index = -1;
    int nav_dim = 0;
    std::vector<int> block_sizes;
    std::vector<int64_t> feature_order;
    std::map<int64_t, int> feature_index;
  };
  Layout makeLayout() const;

  double evaluateCost() const;
  void assemble(const Layout& lay, double lambda, SchurSystem* sys);
  void applyDelta(const Layout& lay, const Eigen::VectorXd& dx_nav,
                  const Eigen::VectorXd& dx_feat);
  SolveStats optimize();
  void marginalizeOldest();
  void manageCandidates(const FrameInput& in, int64_t frame_id, bool is_keyframe);
  const NavState& frameState(int64_t id) const { return frames_.at(id).x; }
  Pose3 cameraPose(int64_t frame_id) const;
  int markRelinearization();

  BackendParams p_;
  bool initialized_ = false;

  std::map<int64_t, Frame> frames_;      // time-ordered by id
  std::vector<int64_t> keyframes_;       // ids, ascending
  int64_t next_frame_id_ = 0;
  int frames_since_keyframe_ = 0;

  std::map<int64_t, Track> features_;
  std::map<int64_t, FeatureCandidate> candidates_;
  double baro_offset_b_ = 0.0;

  std::vector<PreintFactorG> preint_factors_;
  std::vector<BaroFactorG> baro_factors_;
  std::vector<AttFactorG> att_factors_;
  std::vector<ZupFactorG> zupt_factors_;
  std::vector<GravAttFactorG> grav_att_factors_;
  std::vector<DepthPriorG> depth_priors_;
  std::vector<BiasWalkG> bias_walks_;
  std::vector<StatePriorG> state_priors_;

  std::optional<PreintegratedImu> running_pim_;
  ImuBias running_bias_;
  double last_imu_t_ = -1.0;
  std::deque<ImuSample> zv_buffer_;

  // Selective relinearization bookkeeping.
  std::map<int64_t, NavState> lin_points_;
  std::map<int64_t, double> lin_rho_;
  std::set<int64_t> dirty_frames_;
  std::set<int64_t> dirty_features_;
  bool structure_dirty_ = true;
  int jacobian_evals_ = 0;

  friend class BackendTestAccess;
};

}  // namespace tio
