#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "voxnav/harness.hpp"

namespace voxnav {

namespace {

// nearest-timestamp association within the given window
std::vector<std::pair<size_t, size_t>> associate(const std::vector<TimedPose>& a,
                                                 const std::vector<TimedPose>& b,
                                                 double window = 0.010) {
  std::vector<std::pair<size_t, size_t>> pairs;
  size_t j = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    while (j + 1 < b.size() &&
           std::abs(b[j + 1].t - a[i].t) <= std::abs(b[j].t - a[i].t)) {
      ++j;
    }
    if (j < b.size() && std::abs(b[j].t - a[i].t) <= window) pairs.emplace_back(i, j);
  }
  return pairs;
}

}  // namespace

double compute_ate(const std::vector<TimedPose>& estimated,
                   const std::vector<TimedPose>& ground_truth, AteAlign align) {
  const auto pairs = associate(estimated, ground_truth);
  if (pairs.size() < 10) {
    throw InsufficientOverlap("compute_ate: fewer than 10 associated pairs");
  }

  std::vector<Vec3> est, gt;
  est.reserve(pairs.size());
  gt.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    est.push_back(estimated[i].pose.translation());
    gt.push_back(ground_truth[j].pose.translation());
  }

  if (align == AteAlign::Se2) {
    // closed-form yaw + xy translation (Horn in the plane)
    Vec3 ce = Vec3::Zero(), cg = Vec3::Zero();
    for (size_t k = 0; k < est.size(); ++k) {
      ce += est[k];
      cg += gt[k];
    }
    ce /= static_cast<double>(est.size());
    cg /= static_cast<double>(est.size());
    double sxx = 0.0, sxy = 0.0;
    for (size_t k = 0; k < est.size(); ++k) {
      const double ex = est[k].x() - ce.x(), ey = est[k].y() - ce.y();
      const double gx = gt[k].x() - cg.x(), gy = gt[k].y() - cg.y();
      sxx += ex * gx + ey * gy;
      sxy += ex * gy - ey * gx;
    }
    const double yaw = std::atan2(sxy, sxx);
    const double c = std::cos(yaw), s = std::sin(yaw);
    for (auto& p : est) {
      const double x = p.x() - ce.x(), y = p.y() - ce.y();
      p = Vec3(c * x - s * y + cg.x(), s * x + c * y + cg.y(), p.z() - ce.z() + cg.z());
    }
  }

  double sum_sq = 0.0;
  for (size_t k = 0; k < est.size(); ++k) sum_sq += (est[k] - gt[k]).squaredNorm();
  return std::sqrt(sum_sq / static_cast<double>(est.size()));
}

double compute_rpe(const std::vector<TimedPose>& estimated,
                   const std::vector<TimedPose>& ground_truth, double delta) {
  const auto pairs = associate(estimated, ground_truth);
  if (pairs.size() < 10) {
    throw InsufficientOverlap("compute_rpe: fewer than 10 associated pairs");
  }

  double sum_sq = 0.0;
  size_t n = 0;
  size_t i = 0;
  for (size_t j = 1; j < pairs.size(); ++j) {
    const auto& gi = ground_truth[pairs[i].second].pose;
    const auto& gj = ground_truth[pairs[j].second].pose;
    const double dist = (gj.translation() - gi.translation()).norm();
    if (dist < delta) continue;
    const Pose3 rel_gt = gi.inverse().compose(gj);
    const Pose3 rel_est = estimated[pairs[i].first].pose.inverse().compose(
        estimated[pairs[j].first].pose);
    sum_sq += (rel_est.translation() - rel_gt.translation()).squaredNorm();
    ++n;
    i = j;
  }
  if (n == 0) return 0.0;
  return std::sqrt(sum_sq / static_cast<double>(n));
}

std::string EpisodeMetrics::to_json() const {
  nlohmann::json j;
  j["ate_rmse"] = ate_rmse;
  j["rpe_rmse"] = rpe_rmse;
  j["success"] = success;
  j["path_length"] = path_length;
  j["min_clearance"] = std::isfinite(min_clearance) ? min_clearance : -1.0;
  j["planning_cycle_p95"] = planning_cycle_p95;
  j["odometry_output_count"] = odometry_output_count;
  j["planning_cycles"] = planning_cycles;
  j["maplet_count"] = maplet_count;
  j["loop_closures_accepted"] = loop_closures_accepted;
  j["loop_closures_rejected"] = loop_closures_rejected;
  j["collisions"] = collisions;
  j["cpu_time_total"] = cpu_time_total;
  j["failure_reason"] = failure_reason;
  return j.dump();
}

void RunLog::event(uint64_t tick, const std::string& kind, const std::string& detail) {
  nlohmann::json j;
  j["tick"] = tick;
  j["event"] = kind;
  if (!detail.empty()) j["detail"] = detail;
  lines_.push_back(j.dump());
}

void RunLog::tick_state(uint64_t tick, const Pose3& estimate, const VelocityCommand& cmd) {
  nlohmann::json j;
  j["tick"] = tick;
  const auto& t = estimate.translation();
  const auto& q = estimate.rotation();
  j["pose"] = {t.x(), t.y(), t.z(), q.w(), q.x(), q.y(), q.z()};
  j["cmd"] = {cmd.v, cmd.omega};
  lines_.push_back(j.dump());
}

void RunLog::save(const std::string& path) const {
  std::ofstream os(path);
  for (const auto& l : lines_) os << l << '\n';
}

}  // namespace voxnav
