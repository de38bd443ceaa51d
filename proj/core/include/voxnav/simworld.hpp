#pragma once

#include <cstdint>
#include <limits>
#include <variant>
#include <vector>

#include "voxnav/geometry.hpp"
#include "voxnav/rng.hpp"

namespace voxnav {

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool is_valid() const { return (max.array() > min.array()).all(); }
};

/// A box that translates at constant velocity inside a time window.
/// Stands in for people or carts crossing the robot's path.
struct MovingBox {
  Aabb box;
  Vec3 velocity = Vec3::Zero();  // m/s
  double t_start = 0.0;
  double t_stop = std::numeric_limits<double>::infinity();

  Aabb at(double t) const;
};

/// Axis-aligned box world with an implied ground plane at z = 0.
struct WorldModel {
  Aabb bounds;
  std::vector<Aabb> boxes;
  std::vector<MovingBox> moving_boxes;

  /// Static plus moving boxes evaluated at time t.
  std::vector<Aabb> boxes_at(double t) const;
  bool is_valid() const;
};

struct DepthCameraModel {
  int width = 64;
  int height = 48;
  double fx = 45.7;
  double fy = 45.7;
  double cx = 32.0;
  double cy = 24.0;
  double min_range = 0.3;   // m
  double max_range = 4.0;   // m
  double depth_noise_sigma = 0.0;     // absolute, m
  double depth_noise_rel = 0.01;      // fraction of range
  Pose3 extrinsic;  // camera-in-body; +z optical forward, +x right, +y down

  /// Optical frame mapped onto an x-forward / z-up body frame.
  static Pose3 forward_extrinsic(double cam_height_in_body = 0.0);
};

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // row-major range along the pixel ray, NaN invalid

  float at(int u, int v) const { return data[static_cast<size_t>(v) * width + u]; }
  float& at(int u, int v) { return data[static_cast<size_t>(v) * width + u]; }
};

/// Unicycle robot: roll = pitch = 0 and constant height by construction.
struct RobotState {
  Pose2 pose;
  double z = 0.5;     // body height above ground
  double v = 0.0;     // forward, m/s
  double omega = 0.0; // yaw rate, rad/s

  Pose3 pose3() const { return pose.lift(z); }
  Vec3 world_velocity() const {
    return Vec3(v * std::cos(pose.yaw), v * std::sin(pose.yaw), 0.0);
  }
};

struct VelocityLimits {
  double v_max = 0.8;      // m/s
  double omega_max = 1.5;  // rad/s
};

struct ImuPayload {
  Vec3 angular_rate;        // body frame, rad/s
  Vec3 linear_acceleration; // specific force, body frame, m/s^2
};
struct BodyVelocityPayload {
  Vec3 velocity;  // body frame, m/s
};
struct VisualDeltaPayload {
  Pose3 delta;  // previous-visual-frame to current body pose
  Mat6 covariance;
};
struct DepthPayload {
  DepthImage image;
  Pose3 camera_pose_world;
};

enum class SensorKind { Imu, BodyVelocity, VisualDelta, Depth };

struct SensorSample {
  double timestamp = 0.0;
  SensorKind kind = SensorKind::Imu;
  std::variant<ImuPayload, BodyVelocityPayload, VisualDeltaPayload, DepthPayload> payload;
};

struct SensorNoiseConfig {
  double sigma_gyro = 0.005;        // rad/s
  double sigma_acc = 0.05;          // m/s^2
  double sigma_body_velocity = 0.02;  // m/s
  double sigma_visual_trans = 0.01; // m
  double sigma_visual_rot = 0.005;  // rad
  double gyro_bias_sigma = 0.002;   // rad/s, constant per-run bias scale
  double imu_rate = 200.0;          // Hz
  double body_velocity_rate = 50.0; // Hz
  double visual_rate = 15.0;        // Hz
  double depth_rate = 10.0;         // Hz

  void set_zero_noise() {
    sigma_gyro = sigma_acc = sigma_body_velocity = 0.0;
    sigma_visual_trans = sigma_visual_rot = gyro_bias_sigma = 0.0;
  }
};

constexpr double kGravity = 9.81;

/// Ray-cast range image of the world. Returned values are distance along the
/// pixel ray (not z-depth); rays that hit nothing inside [min_range,
/// max_range] are NaN. Bit-identical for identical inputs and seed.
DepthImage raycast_depth(const WorldModel& world, const Pose3& camera_pose_world,
                         const DepthCameraModel& cam, uint64_t rng_seed,
                         uint64_t tick = 0, double time = 0.0);

/// Exact unicycle step: straight line for |omega| < 1e-9, closed-form arc of
/// radius v/omega otherwise. Commands are clamped to the limits.
RobotState step_robot(const RobotState& state, double v_cmd, double omega_cmd,
                      double dt, const VelocityLimits& limits = {});

/// Emits imu / body-velocity / visual-delta samples at their configured
/// cadences, seeded per stream so streams never perturb each other.
class SensorRig {
 public:
  SensorRig(const SensorNoiseConfig& cfg, uint64_t seed);

  /// Samples covering the sim step from t-dt (state_prev) to t (state).
  std::vector<SensorSample> sample(const RobotState& state_prev,
                                   const RobotState& state, double t, double dt);

  const Vec3& gyro_bias() const { return gyro_bias_; }

 private:
  SensorNoiseConfig cfg_;
  uint64_t seed_;
  Vec3 gyro_bias_;
  uint64_t imu_count_ = 0;
  uint64_t vel_count_ = 0;
  uint64_t visual_count_ = 0;
  bool have_visual_anchor_ = false;
  Pose3 visual_anchor_;
};

}  // namespace voxnav
