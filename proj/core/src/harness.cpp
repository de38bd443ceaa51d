#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <sstream>

#include "voxnav/harness.hpp"

namespace voxnav {

namespace {

double point_box_distance_2d(double x, double y, const Aabb& b) {
  const double dx = std::max({b.min.x() - x, 0.0, x - b.max.x()});
  const double dy = std::max({b.min.y() - y, 0.0, y - b.max.y()});
  return std::hypot(dx, dy);
}

// robot body occupies roughly z in [0, 1]; low clutter below 5 cm ignored
double clearance(const WorldModel& world, double t, double x, double y) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& b : world.boxes_at(t)) {
    if (b.max.z() < 0.05) continue;
    best = std::min(best, point_box_distance_2d(x, y, b));
  }
  return best;
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double idx = p * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(idx);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double f = idx - static_cast<double>(lo);
  return v[lo] * (1.0 - f) + v[hi] * f;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

// Shared closed-loop driver for mapping tours and navigation episodes.
class EpisodeRunner {
 public:
  EpisodeRunner(const Scenario& sc, const MapletSet* prebuilt)
      : sc_(sc), prebuilt_(prebuilt) {}

  void run() {
    sc_.validate();
    const std::clock_t cpu_start = std::clock();

    const double dt = 1.0 / sc_.sim_rate;
    const uint64_t ticks = static_cast<uint64_t>(std::llround(sc_.duration * sc_.sim_rate));
    const uint64_t plan_every =
        static_cast<uint64_t>(std::llround(sc_.sim_rate / sc_.planning_rate));
    const uint64_t depth_every =
        static_cast<uint64_t>(std::llround(sc_.sim_rate / sc_.noise.depth_rate));
    const uint64_t output_every = static_cast<uint64_t>(
        std::llround(sc_.sim_rate * sc_.ekf.output_period));

    DepthCameraModel cam = sc_.camera;
    cam.extrinsic = DepthCameraModel::forward_extrinsic(0.0);

    const bool mapping_on = sc_.mode != ScenarioMode::Navigation;
    const bool use_prebuilt = prebuilt_ != nullptr && !prebuilt_->empty();

    // grid geometry spans the world bounds
    const double res = sc_.grid_resolution;
    const Pose2 grid_origin(sc_.world.bounds.min.x(), sc_.world.bounds.min.y(), 0.0);
    const int gw = static_cast<int>(
        std::ceil((sc_.world.bounds.max.x() - sc_.world.bounds.min.x()) / res));
    const int gh = static_cast<int>(
        std::ceil((sc_.world.bounds.max.y() - sc_.world.bounds.min.y()) / res));

    LayeredGrid layers;
    if (use_prebuilt) {
      layers.static_layer = project_static(*prebuilt_, res, grid_origin, gw, gh);
      layers.optimistic_unknown = false;
    } else {
      layers.static_layer = OccupancyGrid(res, grid_origin, gw, gh);
      layers.optimistic_unknown = true;  // drive by sight
    }
    layers.dynamic_layer = OccupancyGrid(res, grid_origin, gw, gh);

    PlannerConfig planner_cfg = sc_.planner;
    planner_cfg.optimistic_unknown = layers.optimistic_unknown;

    EkfConfig ekf_cfg = sc_.ekf;
    ekf_cfg.sigma_gyro = std::max(sc_.noise.sigma_gyro, 1e-5);
    ekf_cfg.sigma_acc = std::max(sc_.noise.sigma_acc, 1e-4);
    ekf_cfg.meas_sigma_velocity = std::max(sc_.noise.sigma_body_velocity, 1e-4);

    EkfState init;
    init.pose = sc_.start.lift(sc_.body_height);
    init.covariance.setZero();
    init.covariance.block<3, 3>(0, 0) = Mat3::Identity() * 1e-8;
    init.covariance.block<3, 3>(3, 3) = Mat3::Identity() * 1e-8;
    init.covariance.block<3, 3>(6, 6) = Mat3::Identity() * 1e-4;
    const double bias_var = std::max(sc_.noise.gyro_bias_sigma, 1e-6);
    init.covariance.block<3, 3>(9, 9) = Mat3::Identity() * bias_var * bias_var;
    FusedOdometry ekf(ekf_cfg, init);

    SensorRig rig(sc_.noise, sc_.seed);
    RobotState truth;
    truth.pose = sc_.start;
    truth.z = sc_.body_height;

    TsdfConfig tsdf_cfg = sc_.tsdf;
    MapletSet maplets(tsdf_cfg);
    LoopClosureConfig lc_cfg;
    lc_cfg.voxel_size = tsdf_cfg.voxel_size;
    LoopDetectStats lc_stats;
    std::map<uint64_t, uint64_t> maplet_nodes;  // maplet id -> graph node
    std::vector<std::pair<double, uint64_t>> keyframe_times;  // (t, node id)

    VelocityCommand cmd;
    std::vector<double> cycle_seconds;
    size_t waypoint_idx = 0;
    bool tour_done = false;
    bool declared_arrival = false;
    uint64_t depth_frames = 0;
    uint64_t consecutive_plan_failures = 0;
    DepthImage latest_depth;
    bool have_depth = false;
    Path global_path;
    bool have_global = false;
    Pose3 prev_output_pose = init.pose;
    Pose3 last_output_pose = init.pose;
    uint64_t end_tick = ticks;

    gt_traj_.push_back({0.0, truth.pose3()});
    est_traj_.push_back({0.0, init.pose});

    for (uint64_t k = 1; k <= ticks; ++k) {
      const double t = static_cast<double>(k) * dt;
      const RobotState prev = truth;
      truth = step_robot(truth, cmd.v, cmd.omega, dt);
      metrics_.path_length += std::hypot(truth.pose.x - prev.pose.x,
                                         truth.pose.y - prev.pose.y);

      const double clear = clearance(sc_.world, t, truth.pose.x, truth.pose.y);
      metrics_.min_clearance = std::min(metrics_.min_clearance, clear);
      if (clear < sc_.robot_radius) {
        ++metrics_.collisions;
        metrics_.failure_reason = "collision";
        log_.event(k, "collision");
        end_tick = k;
        break;
      }

      for (const auto& sample : rig.sample(prev, truth, t, dt)) {
        for (const auto& out : ekf.feed(sample)) {
          outputs_.push_back(out);
          est_traj_.push_back({out.timestamp, out.pose});
          prev_output_pose = last_output_pose;
          last_output_pose = out.pose;
        }
      }
      if (k % output_every == 0) gt_traj_.push_back({t, truth.pose3()});

      if (k % depth_every == 0) {
        const Pose3 cam_true = truth.pose3().compose(cam.extrinsic);
        latest_depth = raycast_depth(sc_.world, cam_true, cam, sc_.seed, depth_frames++, t);
        have_depth = true;

        if (mapping_on) {
          const Pose3 est_pose = ekf.state().pose;
          if (maplets.empty() ||
              should_spawn_maplet(est_pose, maplets.active(), prev_output_pose,
                                  last_output_pose, tsdf_cfg)) {
            const uint64_t mid = maplets.spawn(est_pose, t);
            const uint64_t node = graph_.add_node(NodeKind::Maplet,
                                                  maplets.active().anchor_pose, mid,
                                                  graph_.last_keyframe());
            maplet_nodes[mid] = node;
            log_.event(k, "maplet_spawn", std::to_string(mid));
          }
          Maplet& active = maplets.active();
          integrate_depth(active, latest_depth, cam,
                          active.anchor_pose.inverse().compose(est_pose).compose(cam.extrinsic),
                          tsdf_cfg);

          const auto kf = add_keyframe(graph_, est_pose, ekf.state().pose_covariance(),
                                       latest_depth, cam,
                                       maplet_nodes.at(maplets.active_id()));
          if (kf) {
            keyframe_times.emplace_back(t, *kf);
            log_.event(k, "keyframe", std::to_string(*kf));
            if (sc_.loop_closures_enabled) {
              if (auto factor = detect_loop_closure(graph_, *kf, lc_cfg, &lc_stats)) {
                graph_.add_factor(*factor);
                log_.event(k, "loop_closure",
                           std::to_string(factor->from) + "->" + std::to_string(factor->to));
                const auto report = optimize(graph_);
                writeback_maplet_poses(graph_, maplets);
                log_.event(k, "optimize",
                           "cost " + fmt(report.initial_cost) + " -> " +
                               fmt(report.final_cost));
                if (sc_.feed_fixes_to_ekf) {
                  Mat6 fix_cov = factor->information.inverse();
                  fix_cov = 0.5 * (fix_cov + fix_cov.transpose()).eval();
                  for (const auto& o :
                       ekf.feed_global_fix(t, graph_.node(*kf).pose, fix_cov)) {
                    outputs_.push_back(o);
                    est_traj_.push_back({o.timestamp, o.pose});
                  }
                }
              }
            }
          }
        }
      }

      if (k % plan_every == 0) {
        const auto cycle_start = std::chrono::steady_clock::now();
        ++metrics_.planning_cycles;

        decay_dynamic(layers.dynamic_layer, sc_.dynamic_layer.decay);
        const Pose3 est_pose = ekf.state().pose;
        if (have_depth) {
          update_dynamic(layers.dynamic_layer, latest_depth, cam,
                         est_pose.compose(cam.extrinsic), sc_.dynamic_layer);
        }
        const OccupancyGrid fused = fuse(layers);
        const OccupancyGrid inflated = inflate(fused, sc_.robot_radius);
        const Pose2 robot = Pose2::project(est_pose);

        Pose2 target = sc_.goal;
        if (sc_.mode == ScenarioMode::Mapping) {
          while (waypoint_idx < sc_.waypoints.size() &&
                 std::hypot(robot.x - sc_.waypoints[waypoint_idx].x,
                            robot.y - sc_.waypoints[waypoint_idx].y) < sc_.waypoint_tol) {
            log_.event(k, "waypoint_reached", std::to_string(waypoint_idx));
            ++waypoint_idx;
          }
          if (waypoint_idx >= sc_.waypoints.size()) {
            tour_done = true;
            end_tick = k;
            break;
          }
          target = sc_.waypoints[waypoint_idx];
        }

        if (!have_global || needs_global_replan(robot, global_path, inflated, planner_cfg)) {
          const PlanResult global = plan_global(inflated, robot, target, planner_cfg);
          if (global.status == PlanStatus::Ok) {
            if (have_global) log_.event(k, "global_replan");
            global_path = global.path;
            have_global = true;
            consecutive_plan_failures = 0;
          } else {
            have_global = false;
            ++consecutive_plan_failures;
            log_.event(k, "global_plan_failed",
                       global.status == PlanStatus::GoalOccupied ? "GoalOccupied"
                                                                 : "NoPath");
            if (consecutive_plan_failures >= 5) {
              metrics_.failure_reason =
                  global.status == PlanStatus::GoalOccupied ? "GoalOccupied" : "NoPath";
              end_tick = k;
              break;
            }
            cmd = {0.0, 0.0};
          }
        }

        if (have_global) {
          const Pose2 local_target = select_local_target(global_path, robot);
          const PlanResult local = plan_local(inflated, robot, local_target, planner_cfg);
          if (local.status == PlanStatus::Ok) {
            if (is_detour(local.path, robot, local_target)) log_.event(k, "local_detour");
            const TrackResult track = pure_pursuit(robot, local.path, sc_.tracker);
            cmd = track.command;
            const double goal_dist = std::hypot(robot.x - sc_.goal.x, robot.y - sc_.goal.y);
            const double goal_yaw =
                std::abs(normalize_angle(robot.yaw - sc_.goal.yaw));
            if (sc_.mode != ScenarioMode::Mapping && track.goal_reached &&
                goal_dist <= sc_.tracker.goal_pos_tol &&
                goal_yaw <= sc_.tracker.goal_yaw_tol) {
              declared_arrival = true;
              cmd = {0.0, 0.0};
              log_.event(k, "arrival_declared");
              end_tick = k;
            }
          } else {
            // tracker commands zero velocity while the window is blocked
            cmd = {0.0, 0.0};
            log_.event(k, "local_plan_failed",
                       local.status == PlanStatus::BudgetExhausted ? "BudgetExhausted"
                                                                   : "NoPath");
          }
        }

        log_.tick_state(k, est_pose, cmd);
        cycle_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - cycle_start)
                .count());
        if (declared_arrival) break;
      }
    }

    // final optimization pass and writeback for mapping sessions
    if (mapping_on && graph_.nodes().size() > 1) {
      const auto report = optimize(graph_);
      writeback_maplet_poses(graph_, maplets);
      log_.event(end_tick, "optimize_final",
                 "cost " + fmt(report.initial_cost) + " -> " + fmt(report.final_cost));
    }

    metrics_.odometry_output_count = ekf.output_count();
    metrics_.maplet_count = maplets.size();
    metrics_.loop_closures_accepted = lc_stats.accepted;
    metrics_.loop_closures_rejected = lc_stats.rejected;

    if (sc_.mode == ScenarioMode::Mapping) {
      metrics_.success = tour_done && metrics_.collisions == 0;
      if (!tour_done && metrics_.failure_reason.empty()) {
        metrics_.failure_reason = "tour_timeout";
      }
      // mapping quality is judged on the optimized keyframe trajectory
      std::vector<TimedPose> kf_traj;
      for (const auto& [kt, node] : keyframe_times) {
        kf_traj.push_back({kt, graph_.node(node).pose});
      }
      if (kf_traj.size() >= 10) {
        metrics_.ate_rmse = compute_ate(kf_traj, gt_traj_, AteAlign::None);
      } else if (est_traj_.size() >= 10) {
        metrics_.ate_rmse = compute_ate(est_traj_, gt_traj_, AteAlign::None);
      }
    } else {
      const Pose2 final_true = truth.pose;
      const bool gt_ok =
          std::hypot(final_true.x - sc_.goal.x, final_true.y - sc_.goal.y) <=
              sc_.success_pos_tol &&
          std::abs(normalize_angle(final_true.yaw - sc_.goal.yaw)) <= sc_.success_yaw_tol;
      metrics_.success = declared_arrival && gt_ok && metrics_.collisions == 0;
      if (!declared_arrival && metrics_.failure_reason.empty()) {
        metrics_.failure_reason = "timeout";
      } else if (declared_arrival && !gt_ok) {
        metrics_.failure_reason = "arrival_estimate_off";
      }
      if (est_traj_.size() >= 10) {
        metrics_.ate_rmse = compute_ate(est_traj_, gt_traj_, AteAlign::None);
      }
    }
    if (est_traj_.size() >= 10) {
      metrics_.rpe_rmse = compute_rpe(est_traj_, gt_traj_);
    }

    if (!sc_.deterministic) {
      metrics_.planning_cycle_p95 = percentile(cycle_seconds, 0.95);
      metrics_.cpu_time_total =
          static_cast<double>(std::clock() - cpu_start) / CLOCKS_PER_SEC;
    }

    maplets_out_ = std::move(maplets);
  }

  // perpendicular deviation of the local path from the chord to the target
  static bool is_detour(const Path& local, const Pose2& robot, const Pose2& target) {
    const double cx = target.x - robot.x, cy = target.y - robot.y;
    const double len = std::hypot(cx, cy);
    if (len < 0.3) return false;
    double max_dev = 0.0;
    for (const auto& st : local.states) {
      const double dev = std::abs(cy * (st.pose.x - robot.x) - cx * (st.pose.y - robot.y)) / len;
      max_dev = std::max(max_dev, dev);
    }
    return max_dev > 0.15;
  }

  Scenario sc_;
  const MapletSet* prebuilt_;
  EpisodeMetrics metrics_;
  RunLog log_;
  PoseGraph graph_;
  MapletSet maplets_out_;
  std::vector<FusedOdometryOutput> outputs_;
  std::vector<TimedPose> est_traj_, gt_traj_;
};

}  // namespace

MappingResult run_mapping_session(const Scenario& scenario) {
  if (scenario.mode == ScenarioMode::Navigation) {
    throw ScenarioInvalid("run_mapping_session: scenario mode is navigation");
  }
  EpisodeRunner runner(scenario, nullptr);
  runner.run();
  MappingResult out;
  out.maplets = std::move(runner.maplets_out_);
  out.graph = std::move(runner.graph_);
  out.metrics = std::move(runner.metrics_);
  out.log = std::move(runner.log_);
  out.odometry = std::move(runner.outputs_);
  out.estimated_trajectory = std::move(runner.est_traj_);
  out.ground_truth_trajectory = std::move(runner.gt_traj_);
  return out;
}

NavigationResult run_navigation_episode(const Scenario& scenario,
                                        const MapletSet* prebuilt_map) {
  if (scenario.mode == ScenarioMode::Mapping) {
    throw ScenarioInvalid("run_navigation_episode: scenario mode is mapping");
  }
  EpisodeRunner runner(scenario, prebuilt_map);
  runner.run();
  NavigationResult out;
  out.metrics = std::move(runner.metrics_);
  out.log = std::move(runner.log_);
  out.odometry = std::move(runner.outputs_);
  out.estimated_trajectory = std::move(runner.est_traj_);
  out.ground_truth_trajectory = std::move(runner.gt_traj_);
  return out;
}

}  // namespace voxnav
