#include "voxnav/navgrid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

namespace voxnav {

OccupancyGrid::OccupancyGrid(double resolution, const Pose2& origin, int width, int height)
    : resolution_(resolution), origin_(origin), width_(width), height_(height) {
  cells_.assign(static_cast<size_t>(width) * height, 0.0f);
}

void OccupancyGrid::add(int i, int j, float delta) {
  float& c = at(i, j);
  c = std::clamp(c + delta, kLogOddsMin, kLogOddsMax);
}

GridIndex OccupancyGrid::world_to_cell(double x, double y) const {
  const double dx = x - origin_.x;
  const double dy = y - origin_.y;
  const double c = std::cos(origin_.yaw), s = std::sin(origin_.yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return GridIndex(static_cast<int>(std::floor(lx / resolution_)),
                   static_cast<int>(std::floor(ly / resolution_)));
}

Vec3 OccupancyGrid::cell_center(int i, int j) const {
  const double lx = (i + 0.5) * resolution_;
  const double ly = (j + 0.5) * resolution_;
  const double c = std::cos(origin_.yaw), s = std::sin(origin_.yaw);
  return Vec3(origin_.x + c * lx - s * ly, origin_.y + s * lx + c * ly, 0.0);
}

bool OccupancyGrid::same_geometry(const OccupancyGrid& other) const {
  return resolution_ == other.resolution_ && width_ == other.width_ &&
         height_ == other.height_ && origin_.x == other.origin_.x &&
         origin_.y == other.origin_.y && origin_.yaw == other.origin_.yaw;
}

OccupancyGrid project_static(const MapletSet& maplets, double resolution,
                             const Pose2& origin, int width, int height, double z_lo,
                             double z_hi, double z_step) {
  OccupancyGrid grid(resolution, origin, width, height);
  for (int j = 0; j < height; ++j) {
    for (int i = 0; i < width; ++i) {
      const Vec3 c = grid.cell_center(i, j);
      bool any_negative = false;
      bool all_observed_positive = true;
      for (double z = z_lo; z <= z_hi + 1e-9; z += z_step) {
        const auto s = maplets.query(Vec3(c.x(), c.y(), z));
        if (!s) {
          all_observed_positive = false;
          continue;
        }
        if (s->distance < 0.0) {
          any_negative = true;
          break;
        }
      }
      if (any_negative) {
        grid.at(i, j) = kLogOddsMax;
      } else if (all_observed_positive) {
        grid.at(i, j) = kLogOddsMin;
      }
    }
  }
  return grid;
}

void update_dynamic(OccupancyGrid& grid, const DepthImage& depth,
                    const DepthCameraModel& cam, const Pose3& camera_pose_world,
                    const DynamicLayerConfig& cfg) {
  if (!camera_pose_world.is_finite()) throw NonFiniteInput("update_dynamic: pose");

  const Vec3 origin = camera_pose_world.translation();
  const Mat3 R = camera_pose_world.rotation_matrix();

  const auto key = [&](const GridIndex& g) {
    return (static_cast<int64_t>(g.i) << 32) ^ static_cast<uint32_t>(g.j);
  };
  std::unordered_set<int64_t> hits, misses;

  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const float r = depth.at(u, v);
      if (!std::isfinite(r)) continue;
      Vec3 dir((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      dir.normalize();
      const Vec3 end = origin + R * dir * static_cast<double>(r);

      const GridIndex end_cell = grid.world_to_cell(end.x(), end.y());
      const bool endpoint_is_obstacle = end.z() >= cfg.z_lo && end.z() <= cfg.z_hi;
      if (endpoint_is_obstacle && grid.in_bounds(end_cell.i, end_cell.j)) {
        hits.insert(key(end_cell));
      }

      // carve the 2D projection of the ray; never beyond the endpoint
      const double len2d = std::hypot(end.x() - origin.x(), end.y() - origin.y());
      const int steps = static_cast<int>(len2d / (0.5 * grid.resolution()));
      GridIndex prev(-1 << 20, -1 << 20);
      for (int s = 0; s < steps; ++s) {
        const double a = static_cast<double>(s) / steps;
        const GridIndex c = grid.world_to_cell(origin.x() + a * (end.x() - origin.x()),
                                               origin.y() + a * (end.y() - origin.y()));
        if (c == prev) continue;
        prev = c;
        if (c == end_cell) break;
        if (grid.in_bounds(c.i, c.j)) misses.insert(key(c));
      }
    }
  }

  for (int64_t k : hits) misses.erase(k);
  for (int64_t k : hits) {
    grid.add(static_cast<int>(k >> 32), static_cast<int>(k & 0xffffffff), cfg.l_hit);
  }
  for (int64_t k : misses) {
    grid.add(static_cast<int>(k >> 32), static_cast<int>(k & 0xffffffff), cfg.l_miss);
  }
}

void decay_dynamic(OccupancyGrid& grid, double factor) {
  for (float& c : grid.cells()) c = static_cast<float>(c * factor);
}

OccupancyGrid fuse(const LayeredGrid& layers) {
  if (!layers.static_layer.same_geometry(layers.dynamic_layer)) {
    throw GeometryMismatch("fuse: layer geometries differ");
  }
  OccupancyGrid out(layers.static_layer.resolution(), layers.static_layer.origin(),
                    layers.static_layer.width(), layers.static_layer.height());
  const auto& s_cells = layers.static_layer.cells();
  const auto& d_cells = layers.dynamic_layer.cells();
  for (size_t n = 0; n < s_cells.size(); ++n) {
    const float s = s_cells[n], d = d_cells[n];
    float f;
    if (s == 0.0f && d == 0.0f) {
      f = 0.0f;
    } else if (s == 0.0f) {
      f = (d > 0.0f || layers.optimistic_unknown) ? d : 0.0f;
    } else if (d == 0.0f) {
      f = s;
    } else {
      f = std::max(s, d);
    }
    out.cells()[n] = f;
  }
  return out;
}

namespace {

// Felzenszwalb-Huttenlocher 1D squared distance transform
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  d.assign(n, 0.0);
  std::vector<int> v(n, 0);
  std::vector<double> z(n + 1, 0.0);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace

OccupancyGrid inflate(const OccupancyGrid& grid, double robot_radius) {
  OccupancyGrid out = grid;
  if (robot_radius <= 0.0) return out;
  const int w = grid.width(), h = grid.height();
  constexpr double kInf = 1e18;

  std::vector<double> sq(static_cast<size_t>(w) * h);
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      sq[static_cast<size_t>(j) * w + i] = grid.occupied(i, j) ? 0.0 : kInf;
    }
  }

  std::vector<double> col(h), dcol(h);
  for (int i = 0; i < w; ++i) {
    for (int j = 0; j < h; ++j) col[j] = sq[static_cast<size_t>(j) * w + i];
    edt_1d(col, dcol);
    for (int j = 0; j < h; ++j) sq[static_cast<size_t>(j) * w + i] = dcol[j];
  }
  std::vector<double> row(w), drow(w);
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) row[i] = sq[static_cast<size_t>(j) * w + i];
    edt_1d(row, drow);
    for (int i = 0; i < w; ++i) sq[static_cast<size_t>(j) * w + i] = drow[i];
  }

  const double r_cells = robot_radius / grid.resolution();
  const double r2 = r_cells * r_cells;
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      if (sq[static_cast<size_t>(j) * w + i] <= r2) out.at(i, j) = kLogOddsMax;
    }
  }
  return out;
}

void save_pgm(const OccupancyGrid& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_pgm: cannot open " + path);
  os << "P5\n" << grid.width() << ' ' << grid.height() << "\n255\n";
  // top row first, so row j = height-1 leads
  for (int j = grid.height() - 1; j >= 0; --j) {
    for (int i = 0; i < grid.width(); ++i) {
      const float lo = grid.at(i, j);
      unsigned char px = 205;
      if (lo >= kOccupiedLogOdds) px = 0;
      else if (lo <= kFreeLogOdds) px = 254;
      os.put(static_cast<char>(px));
    }
  }
  std::ofstream info(path + ".info");
  info.precision(17);
  info << "resolution = " << grid.resolution() << "\n"
       << "origin = " << grid.origin().x << ' ' << grid.origin().y << ' '
       << grid.origin().yaw << "\n"
       << "width = " << grid.width() << "\n"
       << "height = " << grid.height() << "\n"
       << "occupied_prob_threshold = 0.65\n"
       << "free_prob_threshold = 0.196\n";
}

}  // namespace voxnav
