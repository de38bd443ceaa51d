#include "voxnav/tsdf.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace voxnav {

VoxelGrid::VoxelGrid(const Vec3& origin, const Eigen::Vector3i& dims, float voxel_size,
                     float truncation)
    : origin_(origin), dims_(dims), voxel_size_(voxel_size), truncation_(truncation) {
  voxels_.assign(static_cast<size_t>(dims.x()) * dims.y() * dims.z(), Voxel{});
}

std::optional<std::pair<double, double>> VoxelGrid::sample(const Vec3& p_maplet) const {
  const Vec3 g = (p_maplet - origin_) / voxel_size_ - Vec3(0.5, 0.5, 0.5);
  const int i0 = static_cast<int>(std::floor(g.x()));
  const int j0 = static_cast<int>(std::floor(g.y()));
  const int k0 = static_cast<int>(std::floor(g.z()));
  if (!in_bounds(i0, j0, k0) || !in_bounds(i0 + 1, j0 + 1, k0 + 1)) return std::nullopt;

  const double fx = g.x() - i0, fy = g.y() - j0, fz = g.z() - k0;
  double tsdf = 0.0, weight = 0.0;
  for (int di = 0; di < 2; ++di) {
    for (int dj = 0; dj < 2; ++dj) {
      for (int dk = 0; dk < 2; ++dk) {
        const Voxel& vox = at(i0 + di, j0 + dj, k0 + dk);
        if (vox.weight <= 0.0f) return std::nullopt;
        const double w = (di ? fx : 1.0 - fx) * (dj ? fy : 1.0 - fy) * (dk ? fz : 1.0 - fz);
        tsdf += w * vox.tsdf;
        weight += w * vox.weight;
      }
    }
  }
  return std::make_pair(tsdf, weight);
}

void integrate_depth(Maplet& maplet, const DepthImage& depth, const DepthCameraModel& cam,
                     const Pose3& camera_pose_in_maplet, const TsdfConfig& cfg) {
  if (!maplet.active) throw InactiveMaplet("integrate_depth: maplet is frozen");
  if (!camera_pose_in_maplet.is_finite()) {
    throw NonFiniteInput("integrate_depth: camera pose not finite");
  }

  VoxelGrid& grid = maplet.grid;
  const float tau = grid.truncation();
  const Pose3 cam_from_maplet = camera_pose_in_maplet.inverse();
  const Mat3 R_cm = cam_from_maplet.rotation_matrix();
  const Vec3 t_cm = cam_from_maplet.translation();

  // Frustum AABB in grid coordinates bounds the voxel sweep.
  Vec3 lo = camera_pose_in_maplet.translation();
  Vec3 hi = lo;
  const double corners_u[2] = {0.0, static_cast<double>(cam.width)};
  const double corners_v[2] = {0.0, static_cast<double>(cam.height)};
  for (double u : corners_u) {
    for (double v : corners_v) {
      Vec3 dir((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      dir.normalize();
      const Vec3 far = camera_pose_in_maplet.transform_point(
          dir * (cam.max_range + cfg.truncation));
      lo = lo.cwiseMin(far);
      hi = hi.cwiseMax(far);
    }
  }
  const double h = grid.voxel_size();
  const auto clamp_idx = [&](double g, int dim_max) {
    return std::clamp(static_cast<int>(std::floor(g)), 0, dim_max - 1);
  };
  const Vec3 glo = (lo - grid.origin()) / h;
  const Vec3 ghi = (hi - grid.origin()) / h;
  const int i0 = clamp_idx(glo.x(), grid.dims().x()), i1 = clamp_idx(ghi.x(), grid.dims().x());
  const int j0 = clamp_idx(glo.y(), grid.dims().y()), j1 = clamp_idx(ghi.y(), grid.dims().y());
  const int k0 = clamp_idx(glo.z(), grid.dims().z()), k1 = clamp_idx(ghi.z(), grid.dims().z());

  const float w_new = 1.0f;
  const float max_w = static_cast<float>(cfg.max_weight);

  for (int k = k0; k <= k1; ++k) {
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        const Vec3 c = grid.voxel_center(i, j, k);
        const Vec3 p_cam = R_cm * c + t_cm;
        if (p_cam.z() <= 1e-6) continue;

        const int u = static_cast<int>(std::lround(cam.fx * p_cam.x() / p_cam.z() + cam.cx));
        const int v = static_cast<int>(std::lround(cam.fy * p_cam.y() / p_cam.z() + cam.cy));
        if (u < 0 || v < 0 || u >= depth.width || v >= depth.height) continue;

        const float d_meas = depth.at(u, v);
        if (!std::isfinite(d_meas)) continue;

        const float r_vox = static_cast<float>(p_cam.norm());
        const float sdf = d_meas - r_vox;  // along-ray signed distance
        if (sdf < -tau) continue;          // more than tau behind the surface

        Voxel& vox = grid.at(i, j, k);
        const float d = std::clamp(sdf, -tau, tau);
        vox.tsdf = (vox.tsdf * vox.weight + d * w_new) / (vox.weight + w_new);
        vox.weight = std::min(vox.weight + w_new, max_w);
      }
    }
  }
}

bool should_spawn_maplet(const Pose3& robot_pose_world, const Maplet& active,
                         const Pose3& prev_pose_estimate, const Pose3& cur_pose_estimate,
                         const TsdfConfig& cfg) {
  const Vec3 p_maplet =
      active.anchor_pose.inverse().transform_point(robot_pose_world.translation());
  if (p_maplet.cwiseAbs().maxCoeff() > cfg.maplet_extent) return true;

  const Pose3 jump = prev_pose_estimate.inverse().compose(cur_pose_estimate);
  if (jump.translation().norm() > cfg.pose_jump_trans) return true;
  const double angle =
      2.0 * std::atan2(jump.rotation().vec().norm(), std::abs(jump.rotation().w()));
  return angle > cfg.pose_jump_rot;
}

uint64_t MapletSet::spawn(const Pose3& robot_pose_world, double timestamp) {
  if (!maplets_.empty()) maplets_.at(active_id_).active = false;

  Maplet m;
  m.id = next_id_++;
  const Vec3 t = robot_pose_world.translation();
  m.anchor_pose = Pose3::from_xyz_yaw(t.x(), t.y(), t.z(), robot_pose_world.yaw());
  const int n = std::max(1, static_cast<int>(std::lround(2.0 * cfg_.maplet_extent /
                                                         cfg_.voxel_size)));
  m.grid = VoxelGrid(Vec3::Constant(-cfg_.maplet_extent), Eigen::Vector3i(n, n, n),
                     static_cast<float>(cfg_.voxel_size),
                     static_cast<float>(cfg_.truncation));
  m.created_at = timestamp;
  m.active = true;
  active_id_ = m.id;
  const uint64_t id = m.id;
  maplets_.emplace(id, std::move(m));
  return id;
}

std::optional<MapletSet::TsdfSample> MapletSet::query(const Vec3& world_point) const {
  std::optional<TsdfSample> best;
  for (const auto& [id, m] : maplets_) {
    const Vec3 p = m.anchor_pose.inverse().transform_point(world_point);
    const auto s = m.grid.sample(p);
    if (!s) continue;
    if (!best || s->second > best->weight) best = TsdfSample{s->first, s->second};
  }
  return best;
}

Maplet& MapletSet::active() { return maplets_.at(active_id_); }

const Maplet* MapletSet::find(uint64_t id) const {
  auto it = maplets_.find(id);
  return it == maplets_.end() ? nullptr : &it->second;
}

Maplet* MapletSet::find(uint64_t id) {
  auto it = maplets_.find(id);
  return it == maplets_.end() ? nullptr : &it->second;
}

std::vector<SurfacePoint> extract_surface(const Maplet& maplet) {
  const VoxelGrid& g = maplet.grid;
  std::vector<SurfacePoint> out;

  const auto gradient = [&](int i, int j, int k) {
    Vec3 n = Vec3::Zero();
    const int idx[3] = {i, j, k};
    for (int a = 0; a < 3; ++a) {
      int lo[3] = {i, j, k}, hi[3] = {i, j, k};
      --lo[a];
      ++hi[a];
      const bool has_lo = g.in_bounds(lo[0], lo[1], lo[2]) &&
                          g.at(lo[0], lo[1], lo[2]).weight > 0.0f;
      const bool has_hi = g.in_bounds(hi[0], hi[1], hi[2]) &&
                          g.at(hi[0], hi[1], hi[2]).weight > 0.0f;
      const double c = g.at(idx[0], idx[1], idx[2]).tsdf;
      if (has_lo && has_hi) {
        n[a] = (g.at(hi[0], hi[1], hi[2]).tsdf - g.at(lo[0], lo[1], lo[2]).tsdf) * 0.5;
      } else if (has_hi) {
        n[a] = g.at(hi[0], hi[1], hi[2]).tsdf - c;
      } else if (has_lo) {
        n[a] = c - g.at(lo[0], lo[1], lo[2]).tsdf;
      }
    }
    return n;
  };

  for (int k = 0; k < g.dims().z(); ++k) {
    for (int j = 0; j < g.dims().y(); ++j) {
      for (int i = 0; i < g.dims().x(); ++i) {
        const Voxel& v0 = g.at(i, j, k);
        if (v0.weight <= 0.0f) continue;
        const int next[3][3] = {{i + 1, j, k}, {i, j + 1, k}, {i, j, k + 1}};
        for (int a = 0; a < 3; ++a) {
          const int ni = next[a][0], nj = next[a][1], nk = next[a][2];
          if (!g.in_bounds(ni, nj, nk)) continue;
          const Voxel& v1 = g.at(ni, nj, nk);
          if (v1.weight <= 0.0f) continue;
          if (!((v0.tsdf < 0.0f) != (v1.tsdf < 0.0f))) continue;
          if (v0.tsdf == v1.tsdf) continue;

          const double t = v0.tsdf / (static_cast<double>(v0.tsdf) - v1.tsdf);
          Vec3 p = g.voxel_center(i, j, k);
          p[a] += t * g.voxel_size();

          Vec3 n0 = gradient(i, j, k), n1 = gradient(ni, nj, nk);
          Vec3 n = (1.0 - t) * n0 + t * n1;
          const double len = n.norm();
          SurfacePoint sp;
          sp.position = p;
          sp.normal = len > 1e-12 ? Vec3(n / len) : Vec3(0, 0, 1);
          out.push_back(sp);
        }
      }
    }
  }
  return out;
}

uint64_t voxel_hash(const Maplet& maplet) {
  // FNV-1a over the raw voxel bytes
  uint64_t h = 1469598103934665603ULL;
  const auto& v = maplet.grid.voxels();
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  const size_t n = v.size() * sizeof(Voxel);
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// FMAP io

namespace {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_fmap(const MapletSet& set, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_fmap: cannot open " + path);
  os.write("FMAP", 4);
  write_pod<uint32_t>(os, 1);
  write_pod<uint32_t>(os, static_cast<uint32_t>(set.size()));
  for (const auto& [id, m] : set.maplets()) {
    write_pod<uint64_t>(os, id);
    const auto& q = m.anchor_pose.rotation();
    const auto& t = m.anchor_pose.translation();
    for (double d : {q.w(), q.x(), q.y(), q.z(), t.x(), t.y(), t.z()}) write_pod(os, d);
    for (int a = 0; a < 3; ++a) write_pod<double>(os, m.grid.origin()[a]);
    for (int a = 0; a < 3; ++a) write_pod<uint32_t>(os, m.grid.dims()[a]);
    write_pod<float>(os, m.grid.voxel_size());
    write_pod<float>(os, m.grid.truncation());
    os.write(reinterpret_cast<const char*>(m.grid.voxels().data()),
             static_cast<std::streamsize>(m.grid.voxels().size() * sizeof(Voxel)));
  }
}

MapletSet load_fmap(const std::string& path, const TsdfConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_fmap: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "FMAP", 4) != 0) throw std::runtime_error("load_fmap: bad magic");
  const uint32_t version = read_pod<uint32_t>(is);
  if (version != 1) throw std::runtime_error("load_fmap: unsupported version");
  const uint32_t count = read_pod<uint32_t>(is);

  MapletSet set(cfg);
  for (uint32_t n = 0; n < count; ++n) {
    Maplet m;
    m.id = read_pod<uint64_t>(is);
    double q[4], t[3], origin[3];
    for (double& d : q) d = read_pod<double>(is);
    for (double& d : t) d = read_pod<double>(is);
    for (double& d : origin) d = read_pod<double>(is);
    uint32_t dims[3];
    for (uint32_t& d : dims) d = read_pod<uint32_t>(is);
    const float voxel_size = read_pod<float>(is);
    const float tau = read_pod<float>(is);
    m.anchor_pose = Pose3(Eigen::Quaterniond(q[0], q[1], q[2], q[3]), Vec3(t[0], t[1], t[2]));
    m.grid = VoxelGrid(Vec3(origin[0], origin[1], origin[2]),
                       Eigen::Vector3i(dims[0], dims[1], dims[2]), voxel_size, tau);
    is.read(reinterpret_cast<char*>(m.grid.voxels().data()),
            static_cast<std::streamsize>(m.grid.voxels().size() * sizeof(Voxel)));
    m.active = false;
    set.maplets().emplace(m.id, std::move(m));
  }
  if (!is) throw std::runtime_error("load_fmap: truncated file");
  return set;
}

void export_surface_ply(const MapletSet& set, const std::string& path) {
  std::vector<SurfacePoint> world_points;
  for (const auto& [id, m] : set.maplets()) {
    const Mat3 R = m.anchor_pose.rotation_matrix();
    for (const auto& sp : extract_surface(m)) {
      world_points.push_back({m.anchor_pose.transform_point(sp.position), R * sp.normal});
    }
  }
  std::ofstream os(path);
  os << "ply\nformat ascii 1.0\nelement vertex " << world_points.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\nend_header\n";
  os.precision(8);
  for (const auto& sp : world_points) {
    os << sp.position.x() << ' ' << sp.position.y() << ' ' << sp.position.z() << ' '
       << sp.normal.x() << ' ' << sp.normal.y() << ' ' << sp.normal.z() << '\n';
  }
}

}  // namespace voxnav
