#pragma once

#include <string>
#include <vector>

#include "voxnav/geometry.hpp"
#include "voxnav/simworld.hpp"
#include "voxnav/tsdf.hpp"

namespace voxnav {

/// Log-odds thresholds shared by fusion, inflation, export, and planning.
constexpr float kLogOddsMin = -4.0f;
constexpr float kLogOddsMax = 4.0f;
inline const float kOccupiedLogOdds = std::log(0.65f / 0.35f);   // p = 0.65
inline const float kFreeLogOdds = std::log(0.196f / 0.804f);     // p = 0.196

/// 2D log-odds occupancy raster. Unobserved cells are exactly 0.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(double resolution, const Pose2& origin, int width, int height);

  double resolution() const { return resolution_; }
  const Pose2& origin() const { return origin_; }
  int width() const { return width_; }
  int height() const { return height_; }

  bool in_bounds(int i, int j) const {
    return i >= 0 && j >= 0 && i < width_ && j < height_;
  }
  float at(int i, int j) const { return cells_[static_cast<size_t>(j) * width_ + i]; }
  float& at(int i, int j) { return cells_[static_cast<size_t>(j) * width_ + i]; }
  const std::vector<float>& cells() const { return cells_; }
  std::vector<float>& cells() { return cells_; }

  /// Additive log-odds update, clamped to [kLogOddsMin, kLogOddsMax].
  void add(int i, int j, float delta);

  GridIndex world_to_cell(double x, double y) const;
  Vec3 cell_center(int i, int j) const;  // z = 0

  bool same_geometry(const OccupancyGrid& other) const;

  bool occupied(int i, int j) const { return at(i, j) >= kOccupiedLogOdds; }
  /// optimistic: block only occupied-ish cells (mapping tours into unknown
  /// space); default: require known-free.
  bool traversable(int i, int j, bool optimistic = false) const {
    const float lo = at(i, j);
    return optimistic ? lo < kOccupiedLogOdds : lo <= kFreeLogOdds;
  }

 private:
  double resolution_ = 0.05;
  Pose2 origin_;  // world pose of the (0,0) cell corner
  int width_ = 0;
  int height_ = 0;
  std::vector<float> cells_;
};

struct LayeredGrid {
  OccupancyGrid static_layer;
  OccupancyGrid dynamic_layer;
  bool optimistic_unknown = false;
};

struct DynamicLayerConfig {
  float l_hit = 0.85f;
  float l_miss = -0.4f;
  double decay = 0.98;       // applied to the whole layer once per cycle
  double z_lo = 0.1;         // endpoint height band counted as an obstacle
  double z_hi = 1.1;
};

/// Project the TSDF map into a 2D static layer over a height band.
/// Any negative observed sample in the band -> occupied; all band samples
/// observed and positive -> free; otherwise unknown.
OccupancyGrid project_static(const MapletSet& maplets, double resolution,
                             const Pose2& origin, int width, int height,
                             double z_lo = 0.1, double z_hi = 1.1, double z_step = 0.1);

/// Log-odds ray carving of one depth frame into the dynamic layer. Each cell
/// is modified at most once per call; hits take precedence over misses.
void update_dynamic(OccupancyGrid& grid, const DepthImage& depth,
                    const DepthCameraModel& cam, const Pose3& camera_pose_world,
                    const DynamicLayerConfig& cfg = {});

/// Exponential decay of the dynamic layer toward 0 (staleness).
void decay_dynamic(OccupancyGrid& grid, double factor = 0.98);

/// Occupied evidence in either layer dominates; where the dynamic layer is
/// unobserved the static layer is authoritative; a dynamic-free reading
/// cannot overrule an unknown static cell unless optimistic_unknown is set.
OccupancyGrid fuse(const LayeredGrid& layers);

/// Exact Euclidean distance transform; cells within robot_radius of an
/// occupied cell become occupied.
OccupancyGrid inflate(const OccupancyGrid& grid, double robot_radius);

/// Binary PGM (P5), 0 = occupied, 254 = free, 205 = unknown, plus a text
/// sidecar `<path>.info` with resolution and origin.
void save_pgm(const OccupancyGrid& grid, const std::string& path);

}  // namespace voxnav
