#include "voxnav/tracker.hpp"

#include <algorithm>
#include <cmath>

namespace voxnav {

TrackResult pure_pursuit(const Pose2& robot, const Path& path, const TrackerConfig& cfg) {
  if (path.empty()) throw EmptyPath("pure_pursuit: empty path");

  TrackResult out;
  const Pose2& final_state = path.states.back().pose;
  const double goal_dist = std::hypot(robot.x - final_state.x, robot.y - final_state.y);
  const double goal_yaw_err = normalize_angle(final_state.yaw - robot.yaw);

  if (goal_dist <= cfg.goal_pos_tol && std::abs(goal_yaw_err) <= cfg.goal_yaw_tol) {
    out.goal_reached = true;
    return out;  // (0, 0)
  }

  // terminal in-place alignment once position is inside tolerance
  if (goal_dist <= cfg.goal_pos_tol) {
    const double mag = cfg.omega_max * std::min(1.0, std::abs(goal_yaw_err) / M_PI);
    out.command.omega = std::copysign(mag, goal_yaw_err);
    return out;
  }

  // lookahead point: first path state at arc length s_closest + lookahead
  const auto arcs = path.arc_lengths();
  double s_closest = 0.0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i + 1 < path.states.size(); ++i) {
    const auto& a = path.states[i].pose;
    const auto& b = path.states[i + 1].pose;
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = 0.0;
    if (len2 > 1e-18) {
      t = std::clamp(((robot.x - a.x) * vx + (robot.y - a.y) * vy) / len2, 0.0, 1.0);
    }
    const double d = std::hypot(robot.x - (a.x + t * vx), robot.y - (a.y + t * vy));
    if (d < best_d) {
      best_d = d;
      s_closest = arcs[i] + t * std::sqrt(len2);
    }
  }

  const double s_target = s_closest + cfg.lookahead;
  Pose2 lookahead_pt = final_state;
  for (size_t i = 0; i < arcs.size(); ++i) {
    if (arcs[i] >= s_target) {
      lookahead_pt = path.states[i].pose;
      break;
    }
  }

  const double dx = lookahead_pt.x - robot.x;
  const double dy = lookahead_pt.y - robot.y;
  const double alpha =
      normalize_angle(std::atan2(dy, dx) - robot.yaw);

  if (std::abs(alpha) > 0.5 * M_PI) {
    const double mag = cfg.omega_max * std::min(1.0, std::abs(alpha) / M_PI);
    out.command.omega = std::copysign(mag, alpha);
    return out;  // v = 0, spin toward the path
  }

  const double kappa = 2.0 * std::sin(alpha) / cfg.lookahead;
  double v = cfg.v_cruise * std::min(1.0, goal_dist / cfg.slowdown_radius);
  v = std::clamp(v, -cfg.v_max, cfg.v_max);
  const double omega = std::clamp(v * kappa, -cfg.omega_max, cfg.omega_max);
  out.command = {v, omega};
  return out;
}

}  // namespace voxnav
