#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "voxnav/posegraph.hpp"

namespace voxnav {

std::vector<Vec3> depth_snapshot(const DepthImage& depth, const DepthCameraModel& cam,
                                 int stride) {
  std::vector<Vec3> out;
  for (int v = 0; v < depth.height; v += stride) {
    for (int u = 0; u < depth.width; u += stride) {
      const float r = depth.at(u, v);
      if (!std::isfinite(r)) continue;
      Vec3 dir((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      dir.normalize();
      out.push_back(cam.extrinsic.transform_point(dir * r));
    }
  }
  return out;
}

namespace {

// voxel-bucket index for radius-bounded nearest neighbor queries
class BucketIndex {
 public:
  explicit BucketIndex(const std::vector<Vec3>& points, double cell = 0.25)
      : points_(points), cell_(cell) {
    for (size_t i = 0; i < points.size(); ++i) {
      buckets_[key_of(points[i])].push_back(i);
    }
  }

  // nearest point within radius; nullptr when none
  const Vec3* nearest(const Vec3& q, double radius, double* d2_out = nullptr) const {
    const int reach = static_cast<int>(std::ceil(radius / cell_));
    const auto center = key_of(q);
    double best_d2 = radius * radius;
    const Vec3* best = nullptr;
    for (int dz = -reach; dz <= reach; ++dz) {
      for (int dy = -reach; dy <= reach; ++dy) {
        for (int dx = -reach; dx <= reach; ++dx) {
          const auto it = buckets_.find({std::get<0>(center) + dx,
                                         std::get<1>(center) + dy,
                                         std::get<2>(center) + dz});
          if (it == buckets_.end()) continue;
          for (size_t i : it->second) {
            const double d2 = (points_[i] - q).squaredNorm();
            if (d2 < best_d2) {
              best_d2 = d2;
              best = &points_[i];
            }
          }
        }
      }
    }
    if (best && d2_out) *d2_out = best_d2;
    return best;
  }

 private:
  std::tuple<int, int, int> key_of(const Vec3& p) const {
    return {static_cast<int>(std::floor(p.x() / cell_)),
            static_cast<int>(std::floor(p.y() / cell_)),
            static_cast<int>(std::floor(p.z() / cell_))};
  }

  const std::vector<Vec3>& points_;
  double cell_;
  std::map<std::tuple<int, int, int>, std::vector<size_t>> buckets_;
};

}  // namespace

Eigen::VectorXd polar_signature(const std::vector<Vec3>& points) {
  constexpr int kYawBins = 8;
  constexpr int kRangeBins = 4;
  Eigen::VectorXd sig = Eigen::VectorXd::Zero(kYawBins * kRangeBins);
  if (points.empty()) return sig;
  double total = 0.0;
  for (const auto& p : points) {
    if (!p.allFinite()) continue;
    const double yaw = std::atan2(p.y(), p.x());
    int yb = static_cast<int>((yaw + M_PI) / (2.0 * M_PI) * kYawBins);
    yb = std::clamp(yb, 0, kYawBins - 1);
    const double range = std::hypot(p.x(), p.y());
    const int rb = std::clamp(static_cast<int>(range), 0, kRangeBins - 1);
    sig[yb * kRangeBins + rb] += 1.0;
    total += 1.0;
  }
  if (total > 0.0) sig /= total;
  return sig;
}

IcpResult icp_point_to_point(const std::vector<Vec3>& target, const std::vector<Vec3>& source,
                             const Pose3& initial_guess, const LoopClosureConfig& cfg) {
  IcpResult res;
  res.transform = initial_guess;
  if (target.empty() || source.empty()) return res;

  const BucketIndex index(target);

  const auto fit_pairs = [](const std::vector<std::pair<Vec3, Vec3>>& pairs) {
    Vec3 ct = Vec3::Zero(), cs = Vec3::Zero();
    for (const auto& [t, s] : pairs) {
      ct += t;
      cs += s;
    }
    ct /= pairs.size();
    cs /= pairs.size();
    Mat3 W = Mat3::Zero();
    for (const auto& [t, s] : pairs) W += (t - ct) * (s - cs).transpose();
    Eigen::JacobiSVD<Mat3> svd(W, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 D = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) D(2, 2) = -1.0;
    const Mat3 R = svd.matrixU() * D * svd.matrixV().transpose();
    return Pose3(R, Vec3(ct - R * cs));
  };

  for (int iter = 0; iter < cfg.icp_max_iters; ++iter) {
    std::vector<std::pair<Vec3, Vec3>> pairs;
    pairs.reserve(source.size());
    for (const auto& s : source) {
      const Vec3 sp = res.transform.transform_point(s);
      if (const Vec3* t = index.nearest(sp, cfg.max_correspondence)) {
        pairs.emplace_back(*t, s);
      }
    }
    res.iterations = iter + 1;
    if (static_cast<int>(pairs.size()) < cfg.min_points) {
      res.converged = false;
      return res;
    }
    const Pose3 next = fit_pairs(pairs);
    const double step = se3_log(res.transform.inverse().compose(next)).norm();
    res.transform = next;
    if (step < 1e-9) break;
  }

  // trimmed refinement with annealed correspondence radii: shed the bias
  // that viewpoint-dependent surface sampling puts into the coarse alignment
  const double anneal[5] = {1.5 * cfg.inlier_distance, cfg.inlier_distance,
                            0.75 * cfg.inlier_distance, 0.5 * cfg.inlier_distance,
                            0.5 * cfg.inlier_distance};
  for (double radius : anneal) {
    std::vector<std::pair<Vec3, Vec3>> pairs;
    for (const auto& s : source) {
      const Vec3 sp = res.transform.transform_point(s);
      if (const Vec3* t = index.nearest(sp, radius)) pairs.emplace_back(*t, s);
    }
    if (static_cast<int>(pairs.size()) < cfg.min_points / 2) break;
    const Pose3 next = fit_pairs(pairs);
    const double step = se3_log(res.transform.inverse().compose(next)).norm();
    res.transform = next;
    if (step < 1e-10) break;
  }

  // final statistics against the refined transform
  size_t matched = 0, inliers = 0;
  double sum_res = 0.0;
  for (const auto& s : source) {
    const Vec3 sp = res.transform.transform_point(s);
    double d2 = 0.0;
    if (index.nearest(sp, cfg.max_correspondence, &d2)) {
      ++matched;
      const double d = std::sqrt(d2);
      sum_res += d;
      if (d < cfg.inlier_distance) ++inliers;
    }
  }
  if (matched == 0) {
    res.converged = false;
    return res;
  }
  res.mean_residual = sum_res / static_cast<double>(matched);
  res.inlier_fraction = static_cast<double>(inliers) / static_cast<double>(source.size());
  res.converged = true;
  return res;
}

std::optional<Factor> detect_loop_closure(const PoseGraph& graph, uint64_t keyframe_node,
                                          const LoopClosureConfig& cfg,
                                          LoopDetectStats* stats) {
  const auto& kfs = graph.keyframes();
  int new_idx = -1;
  for (int i = 0; i < static_cast<int>(kfs.size()); ++i) {
    if (kfs[i].node_id == keyframe_node) {
      new_idx = i;
      break;
    }
  }
  if (new_idx < 0 || kfs[new_idx].snapshot.empty()) return std::nullopt;
  const KeyframeRecord& query = kfs[new_idx];

  // best signature match outside the temporal exclusion window
  int best_idx = -1;
  double best_dist = cfg.signature_threshold;
  for (int i = 0; i < new_idx - cfg.exclude_recent; ++i) {
    if (kfs[i].snapshot.empty()) continue;
    const double d = (kfs[i].signature - query.signature).cwiseAbs().sum();
    if (d < best_dist) {
      best_dist = d;
      best_idx = i;
    }
  }
  if (best_idx < 0) return std::nullopt;
  const KeyframeRecord& cand = kfs[best_idx];
  if (stats) ++stats->candidates;

  const Pose3 guess =
      graph.node(cand.node_id).pose.inverse().compose(graph.node(query.node_id).pose);
  const IcpResult icp = icp_point_to_point(cand.snapshot, query.snapshot, guess, cfg);

  const bool ok = icp.converged && icp.mean_residual < 2.0 * cfg.voxel_size &&
                  icp.inlier_fraction > cfg.min_inlier_fraction;
  if (!ok) {
    if (stats) ++stats->rejected;
    return std::nullopt;
  }
  if (stats) ++stats->accepted;

  Factor f;
  f.kind = FactorKind::LoopClosure;
  f.from = cand.node_id;
  f.to = query.node_id;
  f.measured = icp.transform;
  const double sigma_t = std::max(icp.mean_residual, 0.5 * cfg.voxel_size);
  const double sigma_r = 2.0 * sigma_t;  // rad, ~1 m lever arm
  Mat6 info = Mat6::Identity();
  info.topLeftCorner<3, 3>() *= icp.inlier_fraction / (sigma_t * sigma_t);
  info.bottomRightCorner<3, 3>() *= icp.inlier_fraction / (sigma_r * sigma_r);
  f.information = info;
  f.huber_delta = 1.0;
  return f;
}

}  // namespace voxnav
