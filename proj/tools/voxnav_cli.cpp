// Scenario runner and map tooling for the voxnav stack.
//
// Exit codes: 0 success, 2 scenario/configuration error, 3 episode failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "voxnav/harness.hpp"

namespace fs = std::filesystem;
using namespace voxnav;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitScenarioError = 2;
constexpr int kExitEpisodeFailure = 3;

struct CommonOpts {
  std::string scenario_file;
  std::string out_dir;
  std::string map_file;
  std::string config_file;
  int64_t seed = -1;
  bool deterministic = false;
};

void apply_config_overrides(Scenario& sc, const std::string& config_file) {
  if (config_file.empty()) return;
  // config files share the scenario key-value syntax minus world/waypoints
  std::ifstream is(config_file);
  if (!is) throw ScenarioInvalid("cannot open config " + config_file);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::istringstream key_ss(line.substr(0, eq)), val_ss(line.substr(eq + 1));
    std::string key;
    key_ss >> key;
    double v;
    if (!(val_ss >> v)) continue;
    if (key == "sigma_gyro") sc.noise.sigma_gyro = v;
    else if (key == "sigma_acc") sc.noise.sigma_acc = v;
    else if (key == "sigma_body_velocity") sc.noise.sigma_body_velocity = v;
    else if (key == "sigma_visual_trans") sc.noise.sigma_visual_trans = v;
    else if (key == "sigma_visual_rot") sc.noise.sigma_visual_rot = v;
    else if (key == "robot_radius") sc.robot_radius = v;
    else if (key == "duration") sc.duration = v;
    else if (key == "maplet_extent") sc.tsdf.maplet_extent = v;
    else std::cerr << "config: ignoring unknown key " << key << "\n";
  }
}

Scenario load_with_overrides(const CommonOpts& opts) {
  Scenario sc = load_scenario(opts.scenario_file);
  apply_config_overrides(sc, opts.config_file);
  if (opts.seed >= 0) sc.seed = static_cast<uint64_t>(opts.seed);
  sc.deterministic = opts.deterministic;
  return sc;
}

std::string meta_line(const CommonOpts& opts, const Scenario& sc, const std::string& mode) {
  nlohmann::json j;
  j["event"] = "meta";
  j["scenario"] = fs::absolute(opts.scenario_file).string();
  j["seed"] = sc.seed;
  j["mode"] = mode;
  j["deterministic"] = sc.deterministic;
  if (!opts.map_file.empty()) j["map"] = fs::absolute(opts.map_file).string();
  if (!opts.config_file.empty()) j["config"] = fs::absolute(opts.config_file).string();
  return j.dump();
}

void write_lines(const std::string& path, const std::string& meta,
                 const std::vector<std::string>& lines) {
  std::ofstream os(path);
  os << meta << '\n';
  for (const auto& l : lines) os << l << '\n';
}

void write_metrics(const std::string& path, const EpisodeMetrics& m) {
  std::ofstream os(path);
  os << m.to_json() << '\n';
}

int cmd_map(const CommonOpts& opts) {
  Scenario sc = load_with_overrides(opts);
  if (sc.mode == ScenarioMode::Navigation) sc.mode = ScenarioMode::Mapping;
  fs::create_directories(opts.out_dir);

  const MappingResult result = run_mapping_session(sc);
  save_fmap(result.maplets, (fs::path(opts.out_dir) / "map.fmap").string());
  save_graph(result.graph, (fs::path(opts.out_dir) / "graph.txt").string());
  write_metrics((fs::path(opts.out_dir) / "metrics.jsonl").string(), result.metrics);
  write_lines((fs::path(opts.out_dir) / "run.log").string(),
              meta_line(opts, sc, "mapping"), result.log.lines());
  export_odometry_log(result.odometry,
                      (fs::path(opts.out_dir) / "odometry.csv").string());

  std::cout << result.metrics.to_json() << "\n";
  return result.metrics.success ? kExitOk : kExitEpisodeFailure;
}

int cmd_nav(const CommonOpts& opts) {
  Scenario sc = load_with_overrides(opts);
  if (sc.mode == ScenarioMode::Mapping) sc.mode = ScenarioMode::Navigation;
  fs::create_directories(opts.out_dir);

  MapletSet prebuilt;
  const MapletSet* prebuilt_ptr = nullptr;
  if (!opts.map_file.empty()) {
    prebuilt = load_fmap(opts.map_file, sc.tsdf);
    prebuilt_ptr = &prebuilt;
  }

  const NavigationResult result = run_navigation_episode(sc, prebuilt_ptr);
  write_metrics((fs::path(opts.out_dir) / "metrics.jsonl").string(), result.metrics);
  write_lines((fs::path(opts.out_dir) / "run.log").string(), meta_line(opts, sc, "navigation"),
              result.log.lines());
  export_odometry_log(result.odometry,
                      (fs::path(opts.out_dir) / "odometry.csv").string());

  std::cout << result.metrics.to_json() << "\n";
  return result.metrics.success ? kExitOk : kExitEpisodeFailure;
}

int cmd_eval(const std::string& log_file) {
  std::ifstream is(log_file);
  if (!is) throw ScenarioInvalid("eval: cannot open " + log_file);
  std::string meta_str;
  std::getline(is, meta_str);
  const auto meta = nlohmann::json::parse(meta_str);
  if (meta.value("event", "") != "meta") {
    throw ScenarioInvalid("eval: log has no meta header");
  }
  std::vector<std::string> recorded;
  std::string line;
  while (std::getline(is, line)) recorded.push_back(line);

  Scenario sc = load_scenario(meta.at("scenario").get<std::string>());
  sc.seed = meta.at("seed").get<uint64_t>();
  sc.deterministic = meta.value("deterministic", false);

  EpisodeMetrics metrics;
  std::vector<std::string> replayed;
  if (meta.value("mode", "navigation") == "mapping") {
    sc.mode = ScenarioMode::Mapping;
    auto result = run_mapping_session(sc);
    metrics = result.metrics;
    replayed = result.log.lines();
  } else {
    sc.mode = ScenarioMode::Navigation;
    MapletSet prebuilt;
    const MapletSet* prebuilt_ptr = nullptr;
    if (meta.contains("map")) {
      prebuilt = load_fmap(meta.at("map").get<std::string>(), sc.tsdf);
      prebuilt_ptr = &prebuilt;
    }
    auto result = run_navigation_episode(sc, prebuilt_ptr);
    metrics = result.metrics;
    replayed = result.log.lines();
  }

  nlohmann::json out = nlohmann::json::parse(metrics.to_json());
  out["replay_identical"] = replayed == recorded;
  std::cout << out.dump() << "\n";
  return kExitOk;
}

int cmd_export(const std::string& map_file, const std::string& format,
               const std::string& out_path) {
  const MapletSet set = load_fmap(map_file);
  if (format == "fmap") {
    save_fmap(set, out_path);
  } else if (format == "pgm") {
    // grid spanning all maplet grids
    double lo_x = 1e18, lo_y = 1e18, hi_x = -1e18, hi_y = -1e18;
    for (const auto& [id, m] : set.maplets()) {
      const double e = m.grid.voxel_size() * m.grid.dims().x();
      const auto& t = m.anchor_pose.translation();
      lo_x = std::min(lo_x, t.x() - e);
      hi_x = std::max(hi_x, t.x() + e);
      lo_y = std::min(lo_y, t.y() - e);
      hi_y = std::max(hi_y, t.y() + e);
    }
    if (set.empty()) throw std::runtime_error("export: empty map");
    const double res = 0.05;
    const int w = static_cast<int>((hi_x - lo_x) / res);
    const int h = static_cast<int>((hi_y - lo_y) / res);
    const OccupancyGrid grid =
        project_static(set, res, Pose2(lo_x, lo_y, 0.0), w, h);
    save_pgm(grid, out_path);
  } else if (format == "ply") {
    export_surface_ply(set, out_path);
  } else if (format == "csv") {
    // maplet anchor table
    std::ofstream os(out_path);
    os << "id,qw,qx,qy,qz,tx,ty,tz\n";
    os.precision(17);
    for (const auto& [id, m] : set.maplets()) {
      const auto& q = m.anchor_pose.rotation();
      const auto& t = m.anchor_pose.translation();
      os << id << ',' << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z() << ','
         << t.x() << ',' << t.y() << ',' << t.z() << '\n';
    }
  } else {
    throw ScenarioInvalid("export: unknown format " + format);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maplet TSDF mapping and hybrid A* navigation, simulation-closed"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string eval_log, export_format = "fmap", export_out;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--seed", opts.seed, "override scenario seed");
    cmd->add_flag("--deterministic", opts.deterministic,
                  "single-threaded fixed order, timing fields zeroed");
    cmd->add_option("--config", opts.config_file, "key=value override file");
    if (needs_out) {
      cmd->add_option("--out", opts.out_dir, "output directory")->required();
    }
  };

  auto* map_cmd = app.add_subcommand("map", "run a mapping session");
  map_cmd->add_option("--scenario", opts.scenario_file, "scenario file")->required();
  add_common(map_cmd, true);

  auto* nav_cmd = app.add_subcommand("nav", "run a navigation episode");
  nav_cmd->add_option("--scenario", opts.scenario_file, "scenario file")->required();
  nav_cmd->add_option("--map", opts.map_file, "prebuilt .fmap map");
  add_common(nav_cmd, true);

  auto* eval_cmd = app.add_subcommand("eval", "replay a run log and recompute metrics");
  eval_cmd->add_option("--log", eval_log, "run.log from a previous run")->required();

  auto* export_cmd = app.add_subcommand("export", "convert a map file");
  export_cmd->add_option("--map", opts.map_file, ".fmap input")->required();
  export_cmd->add_option("--format", export_format, "fmap|pgm|ply|csv");
  export_cmd->add_option("--out", export_out, "output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (map_cmd->parsed()) return cmd_map(opts);
    if (nav_cmd->parsed()) return cmd_nav(opts);
    if (eval_cmd->parsed()) return cmd_eval(eval_log);
    if (export_cmd->parsed()) return cmd_export(opts.map_file, export_format, export_out);
  } catch (const ScenarioInvalid& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return kExitScenarioError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitScenarioError;
  }
  return kExitOk;
}
