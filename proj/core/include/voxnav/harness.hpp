#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxnav/geometry.hpp"
#include "voxnav/navgrid.hpp"
#include "voxnav/odometry.hpp"
#include "voxnav/planner.hpp"
#include "voxnav/posegraph.hpp"
#include "voxnav/simworld.hpp"
#include "voxnav/tracker.hpp"
#include "voxnav/tsdf.hpp"

namespace voxnav {

enum class ScenarioMode { Mapping, Navigation, Combined };

struct Scenario {
  std::string name = "scenario";
  WorldModel world;
  Pose2 start;
  Pose2 goal;
  std::vector<Pose2> waypoints;  // mapping tour
  uint64_t seed = 0;
  double duration = 60.0;  // s cap
  ScenarioMode mode = ScenarioMode::Navigation;

  SensorNoiseConfig noise;
  TsdfConfig tsdf;
  DepthCameraModel camera;
  EkfConfig ekf;
  PlannerConfig planner;
  TrackerConfig tracker;
  DynamicLayerConfig dynamic_layer;

  double body_height = 0.5;     // robot z and camera height
  double robot_radius = 0.3;    // m, also the inflation radius
  double grid_resolution = 0.05;
  double sim_rate = 200.0;      // Hz; integer multiple of 50 and 10
  double planning_rate = 10.0;  // Hz
  double waypoint_tol = 0.3;    // m, mapping tour advance

  // episode-level success tolerances, checked on ground truth; looser than
  // the tracker's internal tolerances to leave room for odometry drift
  double success_pos_tol = 0.25;  // m
  double success_yaw_tol = 0.4;   // rad

  bool loop_closures_enabled = true;
  bool feed_fixes_to_ekf = true;
  bool deterministic = false;  // suppress timing fields for bit-exact outputs

  void validate() const;  // throws ScenarioInvalid
};

struct EpisodeMetrics {
  double ate_rmse = 0.0;           // m
  double rpe_rmse = 0.0;           // m per 1 m delta
  bool success = false;
  double path_length = 0.0;        // m, ground-truth distance traveled
  double min_clearance = std::numeric_limits<double>::infinity();  // m
  double planning_cycle_p95 = 0.0; // s
  uint64_t odometry_output_count = 0;
  uint64_t planning_cycles = 0;
  uint64_t maplet_count = 0;
  uint64_t loop_closures_accepted = 0;
  uint64_t loop_closures_rejected = 0;
  uint64_t collisions = 0;
  double cpu_time_total = 0.0;     // s
  std::string failure_reason;

  std::string to_json() const;
};

/// Line-delimited replayable record of one episode.
class RunLog {
 public:
  void event(uint64_t tick, const std::string& kind, const std::string& detail = "");
  void tick_state(uint64_t tick, const Pose3& estimate, const VelocityCommand& cmd);
  const std::vector<std::string>& lines() const { return lines_; }
  void save(const std::string& path) const;

 private:
  std::vector<std::string> lines_;
};

struct TimedPose {
  double t = 0.0;
  Pose3 pose;
};

enum class AteAlign { None, Se2 };

/// RMSE of translational error after nearest-timestamp association (10 ms)
/// and optional closed-form SE(2) alignment. Throws InsufficientOverlap
/// when fewer than 10 pairs associate.
double compute_ate(const std::vector<TimedPose>& estimated,
                   const std::vector<TimedPose>& ground_truth, AteAlign align);

/// Relative pose error per `delta` meters of ground-truth travel.
double compute_rpe(const std::vector<TimedPose>& estimated,
                   const std::vector<TimedPose>& ground_truth, double delta = 1.0);

struct MappingResult {
  MapletSet maplets;
  PoseGraph graph;
  EpisodeMetrics metrics;
  RunLog log;
  std::vector<FusedOdometryOutput> odometry;
  std::vector<TimedPose> estimated_trajectory;
  std::vector<TimedPose> ground_truth_trajectory;
};

struct NavigationResult {
  EpisodeMetrics metrics;
  RunLog log;
  std::vector<FusedOdometryOutput> odometry;
  std::vector<TimedPose> estimated_trajectory;
  std::vector<TimedPose> ground_truth_trajectory;
};

MappingResult run_mapping_session(const Scenario& scenario);
NavigationResult run_navigation_episode(const Scenario& scenario,
                                        const MapletSet* prebuilt_map = nullptr);

// file io (structured key-value text)
WorldModel load_world(const std::string& path);
void save_world(const WorldModel& world, const std::string& path);
Scenario load_scenario(const std::string& path);

}  // namespace voxnav
