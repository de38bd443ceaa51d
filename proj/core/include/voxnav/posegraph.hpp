#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxnav/geometry.hpp"
#include "voxnav/simworld.hpp"
#include "voxnav/tsdf.hpp"

namespace voxnav {

enum class NodeKind { Keyframe, Maplet };

struct GraphNode {
  uint64_t id = 0;
  NodeKind kind = NodeKind::Keyframe;
  Pose3 pose;           // world-frame estimate
  uint64_t ref_id = 0;  // maplet id for maplet nodes
  // nearest ancestor in the odometry chain; used to correct nodes added
  // after an optimization snapshot was taken
  std::optional<uint64_t> parent_id;
};

enum class FactorKind { Odometry, LoopClosure, AnchorPrior };

struct Factor {
  FactorKind kind = FactorKind::Odometry;
  uint64_t from = 0;
  uint64_t to = 0;       // == from for anchor priors
  Pose3 measured;        // relative from->to (absolute for priors)
  Mat6 information = Mat6::Identity();  // [trans, rot] tangent order
  double huber_delta = 0.0;             // 0 disables the robust kernel
};

struct KeyframeRecord {
  uint64_t node_id = 0;
  std::vector<Vec3> snapshot;   // downsampled back-projected points, body frame
  Eigen::VectorXd signature;    // fixed-length place descriptor
  Pose3 pose_at_capture;
};

struct KeyframePolicy {
  double trans_threshold = 0.5;  // m
  double rot_threshold = 0.3;    // rad
  int snapshot_stride = 1;       // pixel subsampling for the depth snapshot
  double maplet_obs_information = 1e6;
};

struct LoopClosureConfig {
  int exclude_recent = 10;
  double signature_threshold = 0.5;   // L1 distance on normalized histograms
  int icp_max_iters = 30;
  double max_correspondence = 0.5;    // m
  double voxel_size = 0.05;           // accept mean residual < 2 * voxel_size
  double min_inlier_fraction = 0.6;
  double inlier_distance = 0.1;       // m
  int min_points = 50;
};

struct OptimizeConfig {
  int max_iters = 100;
  double lambda_init = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.5;
  double rel_tolerance = 1e-9;
};

enum class OptimizeStatus { Converged, MaxIterations, SingularNormalEquations };

struct OptimizeReport {
  OptimizeStatus status = OptimizeStatus::Converged;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> chi2_per_factor;  // unrobustified r^T Omega r
};

class PoseGraph {
 public:
  uint64_t add_node(NodeKind kind, const Pose3& pose, uint64_t ref_id = 0,
                    std::optional<uint64_t> parent = std::nullopt);
  void add_factor(const Factor& f);

  const std::map<uint64_t, GraphNode>& nodes() const { return nodes_; }
  std::map<uint64_t, GraphNode>& nodes() { return nodes_; }
  const std::vector<Factor>& factors() const { return factors_; }
  std::vector<Factor>& factors() { return factors_; }
  const std::vector<KeyframeRecord>& keyframes() const { return keyframes_; }
  std::vector<KeyframeRecord>& keyframes() { return keyframes_; }

  const GraphNode& node(uint64_t id) const { return nodes_.at(id); }
  GraphNode& node(uint64_t id) { return nodes_.at(id); }

  std::optional<uint64_t> last_keyframe() const { return last_keyframe_; }
  void set_last_keyframe(uint64_t id) { last_keyframe_ = id; }

  /// Merge an optimized snapshot back into this (possibly grown) graph.
  /// Snapshot nodes take the optimized pose; nodes added afterwards are
  /// moved by their nearest snapshot ancestor's correction transform.
  void merge_optimized(const PoseGraph& optimized_snapshot);

 private:
  std::map<uint64_t, GraphNode> nodes_;
  std::vector<Factor> factors_;
  std::vector<KeyframeRecord> keyframes_;
  uint64_t next_id_ = 0;
  std::optional<uint64_t> last_keyframe_;
};

/// Factor residual r = log(measured^-1 * (pose_i^-1 * pose_j)) and its
/// analytic Jacobians w.r.t. right-perturbations of both poses.
Vec6 factor_residual(const Factor& f, const Pose3& pose_i, const Pose3& pose_j,
                     Mat6* J_i = nullptr, Mat6* J_j = nullptr);

/// Keyframe selection and graph wiring. Returns the new node id when the
/// motion thresholds are exceeded (or the graph has no keyframe yet).
std::optional<uint64_t> add_keyframe(PoseGraph& graph, const Pose3& odom_pose,
                                     const Mat6& odom_pose_cov, const DepthImage& depth,
                                     const DepthCameraModel& cam,
                                     std::optional<uint64_t> active_maplet_node,
                                     const KeyframePolicy& policy = {});

struct LoopDetectStats {
  uint64_t candidates = 0;
  uint64_t accepted = 0;
  uint64_t rejected = 0;  // candidates that failed metric verification
};

/// Geometric place recognition: polar-histogram candidate retrieval followed
/// by point-to-point ICP verification.
std::optional<Factor> detect_loop_closure(const PoseGraph& graph, uint64_t keyframe_node,
                                          const LoopClosureConfig& cfg = {},
                                          LoopDetectStats* stats = nullptr);

/// Levenberg-Marquardt with Huber-robust loop closures on sparse normal
/// equations. On singular normal equations the graph is left unmodified.
OptimizeReport optimize(PoseGraph& graph, const OptimizeConfig& cfg = {});

/// Copy optimized node poses onto their maplets' anchors. Voxel data is
/// never touched.
void writeback_maplet_poses(const PoseGraph& graph, MapletSet& maplets);

void save_graph(const PoseGraph& graph, const std::string& path);
PoseGraph load_graph(const std::string& path);

// internals exposed for loop_closure.cpp and tests
Eigen::VectorXd polar_signature(const std::vector<Vec3>& points);
std::vector<Vec3> depth_snapshot(const DepthImage& depth, const DepthCameraModel& cam,
                                 int stride);

struct IcpResult {
  Pose3 transform;  // target-from-source
  double mean_residual = std::numeric_limits<double>::infinity();
  double inlier_fraction = 0.0;
  int iterations = 0;
  bool converged = false;
};
IcpResult icp_point_to_point(const std::vector<Vec3>& target, const std::vector<Vec3>& source,
                             const Pose3& initial_guess, const LoopClosureConfig& cfg);

}  // namespace voxnav
