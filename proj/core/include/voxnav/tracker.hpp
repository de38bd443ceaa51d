#pragma once

#include "voxnav/geometry.hpp"
#include "voxnav/planner.hpp"

namespace voxnav {

struct TrackerConfig {
  double lookahead = 0.6;        // m
  double v_cruise = 0.5;         // m/s
  double v_max = 0.8;            // m/s
  double omega_max = 1.5;        // rad/s
  double goal_pos_tol = 0.1;     // m
  double goal_yaw_tol = 0.2;     // rad
  double slowdown_radius = 1.0;  // m
};

struct VelocityCommand {
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s
};

struct TrackResult {
  VelocityCommand command;
  bool goal_reached = false;
};

/// Pure pursuit: steer at the lookahead point with curvature
/// kappa = 2 sin(alpha) / lookahead; rotate in place when the point falls
/// behind (|alpha| > pi/2) and when aligning yaw at the final state.
TrackResult pure_pursuit(const Pose2& robot, const Path& path, const TrackerConfig& cfg = {});

}  // namespace voxnav
