#pragma once

#include <string>
#include <vector>

#include "voxnav/geometry.hpp"
#include "voxnav/navgrid.hpp"

namespace voxnav {

struct PlannerConfig {
  int yaw_bins = 36;
  std::vector<double> curvatures = {1.0, 2.5};  // 1/m, mirrored to +-
  double arc_cells = 3.0;       // primitive arc length in cells
  bool allow_reverse = false;   // forward-facing sensing
  double goal_pos_tol = 0.1;    // m
  double goal_yaw_tol = 0.2;    // rad
  double w_forward = 1.0;
  double w_rotate_per_bin = 0.5;
  double w_curvature = 0.1;     // * |curvature| * arc length
  int analytic_expansion_period = 16;  // expansions between attempts; 0 = off
  size_t max_expansions = 1000000;
  bool optimistic_unknown = false;  // mapping tours drive into unknown space

  // local planner
  double local_window = 4.0;       // m, square side
  size_t local_max_expansions = 20000;

  // replan policy
  double replan_lateral = 0.5;     // m
  double replan_heading = 0.8;     // rad
};

enum class PlanStatus { Ok, InvalidStart, GoalOccupied, NoPath, BudgetExhausted };

struct PathState {
  Pose2 pose;
  std::string primitive;  // start | straight | arc | rot | goal
  double cost_to_come = 0.0;
};

struct Path {
  std::vector<PathState> states;
  double total_cost = 0.0;

  bool empty() const { return states.empty(); }
  /// Cumulative xy arc length at each state.
  std::vector<double> arc_lengths() const;
};

struct PlanResult {
  PlanStatus status = PlanStatus::NoPath;
  Path path;
  size_t expansions = 0;
};

/// Hybrid A* over (x, y, yaw) with arc, straight, and in-place rotation
/// primitives; duplicate detection on grid-resolution xy bins and yaw bins.
PlanResult plan_global(const OccupancyGrid& inflated, const Pose2& start,
                       const Pose2& goal, const PlannerConfig& cfg = {});

/// Path state nearest to arc length (s_closest + horizon), clamped to the
/// final state.
Pose2 select_local_target(const Path& global_path, const Pose2& robot,
                          double horizon = 2.0);

/// Same search on a windowed sub-grid centered on the robot, with a hard
/// expansion budget.
PlanResult plan_local(const OccupancyGrid& inflated, const Pose2& robot,
                      const Pose2& local_target, const PlannerConfig& cfg = {});

/// True when the robot strays from the path or any remaining path state
/// lands on an occupied inflated cell.
bool needs_global_replan(const Pose2& robot, const Path& global_path,
                         const OccupancyGrid& inflated, const PlannerConfig& cfg = {});

/// CSV `s,x,y,yaw,primitive_label,cost_to_come`.
void export_path_csv(const Path& path, const std::string& file);

}  // namespace voxnav
