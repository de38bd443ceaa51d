#include "voxnav/simworld.hpp"

#include <algorithm>
#include <cmath>

namespace voxnav {

namespace {

enum StreamId : uint64_t {
  kStreamDepth = 1,
  kStreamImu = 2,
  kStreamBodyVelocity = 3,
  kStreamVisual = 4,
  kStreamGyroBias = 5,
};

// Slab intersection; returns nearest entry distance >= 0, or +inf.
double ray_box(const Vec3& origin, const Vec3& dir, const Aabb& box) {
  double t_near = 0.0;
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < box.min[a] || origin[a] > box.max[a]) {
        return std::numeric_limits<double>::infinity();
      }
      continue;
    }
    double t0 = (box.min[a] - origin[a]) / dir[a];
    double t1 = (box.max[a] - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::numeric_limits<double>::infinity();
  }
  return t_near;
}

}  // namespace

Aabb MovingBox::at(double t) const {
  const double dt = std::clamp(t, t_start, t_stop) - t_start;
  Aabb out = box;
  out.min += velocity * dt;
  out.max += velocity * dt;
  return out;
}

std::vector<Aabb> WorldModel::boxes_at(double t) const {
  std::vector<Aabb> out = boxes;
  for (const auto& mb : moving_boxes) out.push_back(mb.at(t));
  return out;
}

bool WorldModel::is_valid() const {
  if (!bounds.is_valid()) return false;
  for (const auto& b : boxes) {
    if (!b.is_valid()) return false;
    if (!bounds.contains(b.min) || !bounds.contains(b.max)) return false;
  }
  return true;
}

Pose3 DepthCameraModel::forward_extrinsic(double cam_height_in_body) {
  Mat3 r;
  // camera x (image right) -> body -y, camera y (image down) -> body -z,
  // camera z (optical axis) -> body +x
  r << 0, 0, 1,
      -1, 0, 0,
       0, -1, 0;
  return Pose3(r, Vec3(0.0, 0.0, cam_height_in_body));
}

DepthImage raycast_depth(const WorldModel& world, const Pose3& camera_pose_world,
                         const DepthCameraModel& cam, uint64_t rng_seed,
                         uint64_t tick, double time) {
  DepthImage img;
  img.width = cam.width;
  img.height = cam.height;
  img.data.assign(static_cast<size_t>(cam.width) * cam.height,
                  std::numeric_limits<float>::quiet_NaN());

  const Vec3 origin = camera_pose_world.translation();
  const Mat3 R = camera_pose_world.rotation_matrix();
  const auto boxes = world.boxes_at(time);

  StreamRng rng(rng_seed, kStreamDepth, tick);

  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      Vec3 dir_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      dir_cam.normalize();
      const Vec3 dir = R * dir_cam;

      double range = std::numeric_limits<double>::infinity();
      for (const auto& box : boxes) {
        range = std::min(range, ray_box(origin, dir, box));
      }
      if (dir.z() < -1e-15) {  // ground plane z = 0, hit from above
        const double t_ground = -origin.z() / dir.z();
        if (t_ground >= 0.0) range = std::min(range, t_ground);
      }

      // one draw per pixel regardless of hit, to keep the stream aligned
      const double n = rng.gaussian();
      if (!std::isfinite(range)) continue;
      const double sigma = cam.depth_noise_sigma + cam.depth_noise_rel * range;
      range += sigma * n;
      if (range < cam.min_range || range > cam.max_range) continue;
      img.at(u, v) = static_cast<float>(range);
    }
  }
  return img;
}

RobotState step_robot(const RobotState& state, double v_cmd, double omega_cmd,
                      double dt, const VelocityLimits& limits) {
  const double v = std::clamp(v_cmd, -limits.v_max, limits.v_max);
  const double w = std::clamp(omega_cmd, -limits.omega_max, limits.omega_max);

  RobotState next = state;
  const double yaw = state.pose.yaw;
  if (std::abs(w) < 1e-9) {
    next.pose.x = state.pose.x + v * dt * std::cos(yaw);
    next.pose.y = state.pose.y + v * dt * std::sin(yaw);
    next.pose.yaw = normalize_angle(yaw + w * dt);
  } else {
    const double r = v / w;
    const double yaw1 = yaw + w * dt;
    next.pose.x = state.pose.x + r * (std::sin(yaw1) - std::sin(yaw));
    next.pose.y = state.pose.y + r * (std::cos(yaw) - std::cos(yaw1));
    next.pose.yaw = normalize_angle(yaw1);
  }
  next.v = v;
  next.omega = w;
  return next;
}

SensorRig::SensorRig(const SensorNoiseConfig& cfg, uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  StreamRng rng(seed_, kStreamGyroBias, 0);
  gyro_bias_ = rng.gaussian3(cfg_.gyro_bias_sigma);
}

std::vector<SensorSample> SensorRig::sample(const RobotState& state_prev,
                                            const RobotState& state, double t,
                                            double dt) {
  std::vector<SensorSample> out;
  const Pose3 pose_prev = state_prev.pose3();
  const Pose3 pose = state.pose3();
  const Vec3 g_world(0.0, 0.0, -kGravity);

  // imu every tick at imu_rate == 1/dt in the default harness wiring
  {
    const Mat3 R_prev = pose_prev.rotation_matrix();
    const Mat3 R = pose.rotation_matrix();
    const Vec3 w_body = so3_log(R_prev.transpose() * R) / dt;
    const Vec3 a_world = (state.world_velocity() - state_prev.world_velocity()) / dt;
    const Vec3 f_body = R.transpose() * (a_world - g_world);

    StreamRng rng(seed_, kStreamImu, imu_count_++);
    ImuPayload p;
    p.angular_rate = w_body + gyro_bias_ + rng.gaussian3(cfg_.sigma_gyro);
    p.linear_acceleration = f_body + rng.gaussian3(cfg_.sigma_acc);
    out.push_back({t, SensorKind::Imu, p});
  }

  const double imu_period = 1.0 / cfg_.imu_rate;
  const uint64_t tick = static_cast<uint64_t>(std::llround(t / dt));
  const uint64_t vel_every =
      std::max<uint64_t>(1, static_cast<uint64_t>(std::llround(cfg_.imu_rate / cfg_.body_velocity_rate)));
  (void)imu_period;

  if (tick % vel_every == 0) {
    StreamRng rng(seed_, kStreamBodyVelocity, vel_count_++);
    BodyVelocityPayload p;
    p.velocity = Vec3(state.v, 0.0, 0.0) + rng.gaussian3(cfg_.sigma_body_velocity);
    out.push_back({t, SensorKind::BodyVelocity, p});
  }

  // visual frames at visual_rate, not necessarily tick-aligned
  if (!have_visual_anchor_) {
    visual_anchor_ = pose_prev;
    have_visual_anchor_ = true;
  }
  const double next_visual_t = static_cast<double>(visual_count_ + 1) / cfg_.visual_rate;
  if (t + 1e-9 >= next_visual_t) {
    StreamRng rng(seed_, kStreamVisual, visual_count_++);
    Vec6 noise;
    const Vec3 nt = rng.gaussian3(cfg_.sigma_visual_trans);
    const Vec3 nr = rng.gaussian3(cfg_.sigma_visual_rot);
    noise << nt, nr;

    VisualDeltaPayload p;
    p.delta = visual_anchor_.inverse().compose(pose).compose(se3_exp(noise));
    p.covariance = Mat6::Identity();
    const double st2 = std::max(cfg_.sigma_visual_trans * cfg_.sigma_visual_trans, 1e-12);
    const double sr2 = std::max(cfg_.sigma_visual_rot * cfg_.sigma_visual_rot, 1e-12);
    p.covariance.topLeftCorner<3, 3>() *= st2;
    p.covariance.bottomRightCorner<3, 3>() *= sr2;
    out.push_back({t, SensorKind::VisualDelta, p});
    visual_anchor_ = pose;
  }

  return out;
}

}  // namespace voxnav
