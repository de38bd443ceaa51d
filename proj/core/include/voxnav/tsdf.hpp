#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxnav/geometry.hpp"
#include "voxnav/simworld.hpp"

namespace voxnav {

struct TsdfConfig {
  double voxel_size = 0.05;      // m
  double truncation = 0.2;       // m, 4 * voxel_size
  double max_weight = 100.0;
  double maplet_extent = 3.0;    // m, half-width of the cubic maplet region
  double pose_jump_trans = 0.15; // m, odometry-degradation spawn trigger
  double pose_jump_rot = 0.1;    // rad
};

struct Voxel {
  float tsdf = 0.0f;   // m, clamped to [-truncation, truncation]
  float weight = 0.0f; // 0 = unobserved
};

/// Dense cell-centered voxel grid in the maplet frame, x-fastest storage.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(const Vec3& origin, const Eigen::Vector3i& dims, float voxel_size,
            float truncation);

  const Vec3& origin() const { return origin_; }
  const Eigen::Vector3i& dims() const { return dims_; }
  float voxel_size() const { return voxel_size_; }
  float truncation() const { return truncation_; }

  size_t index(int i, int j, int k) const {
    return static_cast<size_t>(i) +
           static_cast<size_t>(dims_.x()) * (static_cast<size_t>(j) +
                                             static_cast<size_t>(dims_.y()) * k);
  }
  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_.x() && j < dims_.y() && k < dims_.z();
  }
  Vec3 voxel_center(int i, int j, int k) const {
    return origin_ + voxel_size_ * Vec3(i + 0.5, j + 0.5, k + 0.5);
  }
  const Voxel& at(int i, int j, int k) const { return voxels_[index(i, j, k)]; }
  Voxel& at(int i, int j, int k) { return voxels_[index(i, j, k)]; }
  const std::vector<Voxel>& voxels() const { return voxels_; }
  std::vector<Voxel>& voxels() { return voxels_; }

  /// Trilinear sample; valid only where all 8 surrounding voxels observed.
  std::optional<std::pair<double, double>> sample(const Vec3& p_maplet) const;

 private:
  Vec3 origin_ = Vec3::Zero();  // maplet-frame corner of voxel (0,0,0)
  Eigen::Vector3i dims_ = Eigen::Vector3i::Zero();
  float voxel_size_ = 0.05f;
  float truncation_ = 0.2f;
  std::vector<Voxel> voxels_;
};

/// Rigid TSDF submap. Voxel data freezes when active goes false; only the
/// anchor pose may change afterwards (pose-graph writeback).
struct Maplet {
  uint64_t id = 0;
  Pose3 anchor_pose;  // world-from-maplet
  VoxelGrid grid;
  double created_at = 0.0;
  bool active = true;
};

struct SurfacePoint {
  Vec3 position;  // maplet frame
  Vec3 normal;
};

/// Projective (along-ray) TSDF fusion of one depth frame into an active
/// maplet. Voxels more than one truncation band behind the measured surface
/// are untouched; free-space voxels clamp to +truncation.
void integrate_depth(Maplet& maplet, const DepthImage& depth, const DepthCameraModel& cam,
                     const Pose3& camera_pose_in_maplet, const TsdfConfig& cfg);

/// Spawn policy: leaving the maplet's cubic extent, or an odometry jump
/// between consecutive pose estimates.
bool should_spawn_maplet(const Pose3& robot_pose_world, const Maplet& active,
                         const Pose3& prev_pose_estimate, const Pose3& cur_pose_estimate,
                         const TsdfConfig& cfg);

std::vector<SurfacePoint> extract_surface(const Maplet& maplet);

uint64_t voxel_hash(const Maplet& maplet);

class MapletSet {
 public:
  explicit MapletSet(const TsdfConfig& cfg = {}) : cfg_(cfg) {}

  /// Freezes the current active maplet and anchors a new one at the robot
  /// pose (yaw only, gravity-aligned). Returns the new id.
  uint64_t spawn(const Pose3& robot_pose_world, double timestamp);

  struct TsdfSample {
    double distance = 0.0;
    double weight = 0.0;
  };
  /// Highest-weight sample among maplets covering the point; nullopt when no
  /// observed voxel covers it.
  std::optional<TsdfSample> query(const Vec3& world_point) const;

  Maplet& active();
  const Maplet* find(uint64_t id) const;
  Maplet* find(uint64_t id);
  bool empty() const { return maplets_.empty(); }
  size_t size() const { return maplets_.size(); }
  uint64_t active_id() const { return active_id_; }
  const std::map<uint64_t, Maplet>& maplets() const { return maplets_; }
  std::map<uint64_t, Maplet>& maplets() { return maplets_; }
  const TsdfConfig& config() const { return cfg_; }

 private:
  TsdfConfig cfg_;
  std::map<uint64_t, Maplet> maplets_;
  uint64_t next_id_ = 0;
  uint64_t active_id_ = 0;
};

/// FMAP container, bit-exact little-endian layout.
void save_fmap(const MapletSet& set, const std::string& path);
MapletSet load_fmap(const std::string& path, const TsdfConfig& cfg = {});

/// ASCII PLY `x y z nx ny nz` of all maplet surfaces in the world frame.
void export_surface_ply(const MapletSet& set, const std::string& path);

}  // namespace voxnav
