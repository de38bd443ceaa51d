#pragma once

#include <string>
#include <vector>

#include "voxnav/geometry.hpp"
#include "voxnav/simworld.hpp"

namespace voxnav {

/// chi-square quantile (inverse CDF). Used for Mahalanobis gating.
double chi2_quantile(int dof, double quantile);

struct EkfConfig {
  double sigma_gyro = 0.005;          // rad/s, white
  double sigma_acc = 0.05;            // m/s^2, white
  double sigma_gyro_bias_walk = 1e-4; // rad/s/sqrt(s)
  double meas_sigma_velocity = 0.02;  // m/s, body-velocity measurement noise
  double output_period = 0.02;        // s; 50 Hz output contract
  double gate_quantile = 0.999;
  bool global_fix_position_only = false;
  double min_meas_variance = 1e-12;   // floor applied to measurement R
};

/// Error-state over [drot, dtrans, dvel, dbias]; 12-dim tangent.
struct EkfState {
  Pose3 pose;
  Vec3 velocity = Vec3::Zero();   // world frame
  Vec3 gyro_bias = Vec3::Zero();
  Eigen::Matrix<double, 12, 12> covariance = Eigen::Matrix<double, 12, 12>::Identity() * 1e-4;

  /// 6x6 pose covariance in [trans, rot] tangent order.
  Mat6 pose_covariance() const;
};

struct FusedOdometryOutput {
  double timestamp = 0.0;
  Pose3 pose;
  Twist velocity;   // linear in world frame, angular = bias-corrected gyro
  Mat6 covariance;  // pose, [trans, rot] order
};

struct EkfUpdateStats {
  uint64_t accepted = 0;
  uint64_t rejected = 0;
};

Eigen::Matrix<double, 12, 12> ekf_predict_jacobian(const EkfState& state,
                                                   const ImuPayload& imu, double dt);

EkfState ekf_predict(const EkfState& state, const ImuPayload& imu, double dt,
                     const EkfConfig& cfg);

EkfState ekf_update_velocity(const EkfState& state, const Vec3& meas, const Mat3& R,
                             const EkfConfig& cfg, EkfUpdateStats* stats = nullptr);

EkfState ekf_update_visual_delta(const EkfState& state, const Pose3& prev_anchor,
                                 const Pose3& meas_delta, const Mat6& R,
                                 const EkfConfig& cfg, EkfUpdateStats* stats = nullptr);

EkfState ekf_update_global_fix(const EkfState& state, const Pose3& fix, const Mat6& R,
                               const EkfConfig& cfg, EkfUpdateStats* stats = nullptr);

/// Streaming wrapper: consumes time-ordered samples, runs predict/update, and
/// emits outputs on the fixed output-period grid by tangent-space
/// interpolation of the two bracketing filter states.
class FusedOdometry {
 public:
  explicit FusedOdometry(const EkfConfig& cfg, const EkfState& initial = {});

  /// Throws OutOfOrderSample if a stream's timestamps regress.
  std::vector<FusedOdometryOutput> feed(const SensorSample& sample);
  std::vector<FusedOdometryOutput> feed_global_fix(double timestamp, const Pose3& fix,
                                                   const Mat6& R);

  const EkfState& state() const { return state_; }
  const EkfUpdateStats& stats() const { return stats_; }
  uint64_t output_count() const { return outputs_emitted_; }

 private:
  std::vector<FusedOdometryOutput> advance_outputs(double t_now);
  FusedOdometryOutput interpolate(double t) const;
  void check_order(SensorKind kind, double t);

  EkfConfig cfg_;
  EkfState state_;
  EkfUpdateStats stats_;
  double last_imu_time_ = -1.0;
  double prev_state_time_ = 0.0;
  EkfState prev_state_;
  double state_time_ = 0.0;
  bool started_ = false;
  Pose3 visual_anchor_;
  bool have_visual_anchor_ = false;
  uint64_t outputs_emitted_ = 0;
  double last_stream_time_[4] = {-1.0, -1.0, -1.0, -1.0};
};

/// CSV `t,x,y,z,qw,qx,qy,qz,vx,vy,vz` plus a sidecar `.cov` blob of
/// row-major 6x6 f64 pose covariances, little-endian.
void export_odometry_log(const std::vector<FusedOdometryOutput>& outputs,
                         const std::string& csv_path);

}  // namespace voxnav
