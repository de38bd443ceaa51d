#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "voxnav/harness.hpp"

namespace voxnav {

namespace {

std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  std::istringstream ss(s);
  double v;
  while (ss >> v) out.push_back(v);
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// `key = value` lines; '#' starts a comment; repeated keys append
std::vector<std::pair<std::string, std::string>> parse_kv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ScenarioInvalid("cannot open " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!key.empty()) out.emplace_back(key, value);
  }
  return out;
}

}  // namespace

WorldModel load_world(const std::string& path) {
  WorldModel world;
  for (const auto& [key, value] : parse_kv(path)) {
    const auto n = parse_numbers(value);
    if (key == "bounds" && n.size() == 6) {
      world.bounds = {Vec3(n[0], n[1], n[2]), Vec3(n[3], n[4], n[5])};
    } else if (key == "box" && n.size() == 6) {
      world.boxes.push_back({Vec3(n[0], n[1], n[2]), Vec3(n[3], n[4], n[5])});
    } else {
      throw ScenarioInvalid("world file: bad line `" + key + " = " + value + "`");
    }
  }
  if (!world.is_valid()) throw ScenarioInvalid("world file: invalid geometry");
  return world;
}

void save_world(const WorldModel& world, const std::string& path) {
  std::ofstream os(path);
  os.precision(17);
  os << "bounds = " << world.bounds.min.x() << ' ' << world.bounds.min.y() << ' '
     << world.bounds.min.z() << ' ' << world.bounds.max.x() << ' '
     << world.bounds.max.y() << ' ' << world.bounds.max.z() << '\n';
  for (const auto& b : world.boxes) {
    os << "box = " << b.min.x() << ' ' << b.min.y() << ' ' << b.min.z() << ' '
       << b.max.x() << ' ' << b.max.y() << ' ' << b.max.z() << '\n';
  }
}

Scenario load_scenario(const std::string& path) {
  Scenario sc;
  sc.name = std::filesystem::path(path).stem().string();
  const auto dir = std::filesystem::path(path).parent_path();

  bool have_world = false;
  for (const auto& [key, value] : parse_kv(path)) {
    const auto n = parse_numbers(value);
    if (key == "world") {
      const auto world_path = dir / value;
      sc.world = load_world(world_path.string());
      have_world = true;
    } else if (key == "mode") {
      if (value == "mapping") sc.mode = ScenarioMode::Mapping;
      else if (value == "navigation") sc.mode = ScenarioMode::Navigation;
      else if (value == "combined") sc.mode = ScenarioMode::Combined;
      else throw ScenarioInvalid("scenario: unknown mode " + value);
    } else if (key == "start" && n.size() == 3) {
      sc.start = Pose2(n[0], n[1], n[2]);
    } else if (key == "goal" && n.size() == 3) {
      sc.goal = Pose2(n[0], n[1], n[2]);
    } else if (key == "waypoint" && n.size() == 3) {
      sc.waypoints.emplace_back(n[0], n[1], n[2]);
    } else if (key == "seed" && n.size() == 1) {
      sc.seed = static_cast<uint64_t>(n[0]);
    } else if (key == "duration" && n.size() == 1) {
      sc.duration = n[0];
    } else if (key == "robot_radius" && n.size() == 1) {
      sc.robot_radius = n[0];
    } else if (key == "body_height" && n.size() == 1) {
      sc.body_height = n[0];
    } else if (key == "maplet_extent" && n.size() == 1) {
      sc.tsdf.maplet_extent = n[0];
    } else if (key == "voxel_size" && n.size() == 1) {
      sc.tsdf.voxel_size = n[0];
      sc.tsdf.truncation = 4.0 * n[0];
    } else if (key == "sigma_gyro" && n.size() == 1) {
      sc.noise.sigma_gyro = n[0];
    } else if (key == "sigma_acc" && n.size() == 1) {
      sc.noise.sigma_acc = n[0];
    } else if (key == "sigma_body_velocity" && n.size() == 1) {
      sc.noise.sigma_body_velocity = n[0];
    } else if (key == "sigma_visual_trans" && n.size() == 1) {
      sc.noise.sigma_visual_trans = n[0];
    } else if (key == "sigma_visual_rot" && n.size() == 1) {
      sc.noise.sigma_visual_rot = n[0];
    } else if (key == "gyro_bias_sigma" && n.size() == 1) {
      sc.noise.gyro_bias_sigma = n[0];
    } else if (key == "depth_noise_rel" && n.size() == 1) {
      sc.camera.depth_noise_rel = n[0];
    } else if (key == "zero_noise" && value == "on") {
      sc.noise.set_zero_noise();
      sc.camera.depth_noise_rel = 0.0;
      sc.camera.depth_noise_sigma = 0.0;
    } else if (key == "loop_closures") {
      sc.loop_closures_enabled = value == "on";
    } else if (key == "feed_fixes_to_ekf") {
      sc.feed_fixes_to_ekf = value == "on";
    } else if (key == "moving_box" && n.size() == 10) {
      MovingBox mb;
      mb.box = {Vec3(n[0], n[1], n[2]), Vec3(n[3], n[4], n[5])};
      mb.velocity = Vec3(n[6], n[7], 0.0);
      mb.t_start = n[8];
      mb.t_stop = n[9];
      sc.world.moving_boxes.push_back(mb);
    } else if (key == "success_pos_tol" && n.size() == 1) {
      sc.success_pos_tol = n[0];
    } else if (key == "success_yaw_tol" && n.size() == 1) {
      sc.success_yaw_tol = n[0];
    } else {
      throw ScenarioInvalid("scenario: bad line `" + key + " = " + value + "`");
    }
  }
  if (!have_world) throw ScenarioInvalid("scenario: missing world");
  sc.validate();
  return sc;
}

void Scenario::validate() const {
  if (!world.is_valid()) throw ScenarioInvalid("scenario: invalid world");
  const auto inside = [&](const Pose2& p) {
    return p.x > world.bounds.min.x() && p.x < world.bounds.max.x() &&
           p.y > world.bounds.min.y() && p.y < world.bounds.max.y();
  };
  const auto collides = [&](const Pose2& p) {
    for (const auto& b : world.boxes) {
      const double dx = std::max({b.min.x() - p.x, 0.0, p.x - b.max.x()});
      const double dy = std::max({b.min.y() - p.y, 0.0, p.y - b.max.y()});
      if (b.max.z() > 0.05 && std::hypot(dx, dy) < robot_radius) return true;
    }
    return false;
  };
  if (!inside(start) || collides(start)) {
    throw ScenarioInvalid("scenario: start outside bounds or in collision");
  }
  if (mode != ScenarioMode::Mapping) {
    if (!inside(goal)) throw ScenarioInvalid("scenario: goal outside bounds");
  }
  if (mode == ScenarioMode::Mapping && waypoints.empty()) {
    throw ScenarioInvalid("scenario: mapping tour needs waypoints");
  }
  for (const auto& w : waypoints) {
    if (!inside(w) || collides(w)) {
      throw ScenarioInvalid("scenario: waypoint outside bounds or in collision");
    }
  }
  if (duration <= 0.0) throw ScenarioInvalid("scenario: non-positive duration");
}

}  // namespace voxnav
