#include "voxnav/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <unordered_map>

namespace voxnav {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct BinKey {
  int32_t ix, iy, iyaw;
  bool operator==(const BinKey&) const = default;
};

struct BinHash {
  size_t operator()(const BinKey& k) const {
    uint64_t h = static_cast<uint32_t>(k.ix);
    h = h * 0x9e3779b97f4a7c15ULL + static_cast<uint32_t>(k.iy);
    h = h * 0x9e3779b97f4a7c15ULL + static_cast<uint32_t>(k.iyaw);
    return static_cast<size_t>(h ^ (h >> 32));
  }
};

// Single-source grid distances from the goal cell over traversable cells,
// 8-connected. The strong admissible heuristic for hybrid A*.
std::vector<double> goal_distances(const OccupancyGrid& grid, const GridIndex& goal,
                                   bool optimistic) {
  const int w = grid.width(), h = grid.height();
  std::vector<double> dist(static_cast<size_t>(w) * h, kInf);
  using QE = std::pair<double, int>;
  std::priority_queue<QE, std::vector<QE>, std::greater<>> pq;
  const auto id = [&](int i, int j) { return static_cast<size_t>(j) * w + i; };
  if (!grid.in_bounds(goal.i, goal.j)) return dist;
  dist[id(goal.i, goal.j)] = 0.0;
  pq.emplace(0.0, static_cast<int>(id(goal.i, goal.j)));
  const double res = grid.resolution();
  const double diag = res * std::sqrt(2.0);
  while (!pq.empty()) {
    const auto [d, n] = pq.top();
    pq.pop();
    const int i = n % w, j = n / w;
    if (d > dist[n]) continue;
    for (int dj = -1; dj <= 1; ++dj) {
      for (int di = -1; di <= 1; ++di) {
        if (di == 0 && dj == 0) continue;
        const int ni = i + di, nj = j + dj;
        if (!grid.in_bounds(ni, nj)) continue;
        if (!grid.traversable(ni, nj, optimistic)) continue;
        const double nd = d + ((di == 0 || dj == 0) ? res : diag);
        if (nd < dist[id(ni, nj)]) {
          dist[id(ni, nj)] = nd;
          pq.emplace(nd, static_cast<int>(id(ni, nj)));
        }
      }
    }
  }
  return dist;
}

struct Node {
  Pose2 pose;
  double g = 0.0;
  int parent = -1;
  std::string primitive = "start";
};

struct OpenEntry {
  double f, g;
  BinKey bin;
  uint64_t seq;
  int node;
  bool operator>(const OpenEntry& o) const {
    if (f != o.f) return f > o.f;
    if (g != o.g) return g > o.g;
    if (bin.ix != o.bin.ix) return bin.ix > o.bin.ix;
    if (bin.iy != o.bin.iy) return bin.iy > o.bin.iy;
    if (bin.iyaw != o.bin.iyaw) return bin.iyaw > o.bin.iyaw;
    return seq > o.seq;
  }
};

class HybridSearch {
 public:
  HybridSearch(const OccupancyGrid& grid, const PlannerConfig& cfg)
      : grid_(grid), cfg_(cfg) {}

  PlanResult run(const Pose2& start, const Pose2& goal, size_t budget) {
    PlanResult result;
    const GridIndex sc = grid_.world_to_cell(start.x, start.y);
    const GridIndex gc = grid_.world_to_cell(goal.x, goal.y);
    if (!grid_.in_bounds(sc.i, sc.j) ||
        !grid_.traversable(sc.i, sc.j, cfg_.optimistic_unknown)) {
      result.status = PlanStatus::InvalidStart;
      return result;
    }
    if (!grid_.in_bounds(gc.i, gc.j) ||
        !grid_.traversable(gc.i, gc.j, cfg_.optimistic_unknown)) {
      result.status = PlanStatus::GoalOccupied;
      return result;
    }

    goal_ = goal;
    if (at_goal(start)) {
      result.status = PlanStatus::Ok;
      result.path.states.push_back({start, "start", 0.0});
      result.path.total_cost = 0.0;
      return result;
    }

    goal_dist_ = goal_distances(grid_, gc, cfg_.optimistic_unknown);

    nodes_.clear();
    nodes_.push_back({start, 0.0, -1, "start"});
    std::priority_queue<OpenEntry, std::vector<OpenEntry>, std::greater<>> open;
    std::unordered_map<BinKey, double, BinHash> best_g;
    uint64_t seq = 0;

    const double h0 = heuristic(start);
    if (!std::isfinite(h0)) {
      result.status = PlanStatus::NoPath;
      return result;
    }
    const BinKey b0 = bin_of(start);
    best_g[b0] = 0.0;
    open.push({h0, 0.0, b0, seq++, 0});

    const auto primitives = make_primitives();

    while (!open.empty()) {
      const OpenEntry top = open.top();
      open.pop();
      const Node cur = nodes_[top.node];  // copy; nodes_ may reallocate
      if (top.g > cur.g + 1e-12) continue;

      ++result.expansions;
      if (result.expansions > budget) {
        result.status = PlanStatus::BudgetExhausted;
        return result;
      }

      if (at_goal(cur.pose)) {
        result.status = PlanStatus::Ok;
        result.path = reconstruct(top.node);
        return result;
      }

      if (cfg_.analytic_expansion_period > 0 &&
          result.expansions % cfg_.analytic_expansion_period == 0) {
        if (int leaf = try_analytic(top.node); leaf >= 0) {
          result.status = PlanStatus::Ok;
          result.path = reconstruct(leaf);
          return result;
        }
      }

      for (const auto& prim : primitives) {
        Pose2 next;
        double cost;
        if (!apply_primitive(cur.pose, prim, &next, &cost)) continue;
        const double ng = cur.g + cost;
        const BinKey nb = bin_of(next);
        auto it = best_g.find(nb);
        if (it != best_g.end() && it->second <= ng + 1e-12) continue;
        const double nh = heuristic(next);
        if (!std::isfinite(nh)) continue;
        best_g[nb] = ng;
        nodes_.push_back({next, ng, top.node, prim.label});
        open.push({ng + nh, ng, nb, seq++, static_cast<int>(nodes_.size() - 1)});
      }
    }
    result.status = PlanStatus::NoPath;
    return result;
  }

 private:
  struct Primitive {
    enum Kind { Straight, Arc, Rotate } kind;
    double curvature = 0.0;
    double dyaw = 0.0;
    std::string label;
  };

  std::vector<Primitive> make_primitives() const {
    std::vector<Primitive> out;
    out.push_back({Primitive::Straight, 0.0, 0.0, "straight"});
    for (double k : cfg_.curvatures) {
      out.push_back({Primitive::Arc, k, 0.0, "arc"});
      out.push_back({Primitive::Arc, -k, 0.0, "arc"});
    }
    const double bin = 2.0 * M_PI / cfg_.yaw_bins;
    out.push_back({Primitive::Rotate, 0.0, bin, "rot"});
    out.push_back({Primitive::Rotate, 0.0, -bin, "rot"});
    if (cfg_.allow_reverse) {
      out.push_back({Primitive::Straight, 0.0, 0.0, "reverse"});
    }
    return out;
  }

  double arc_length() const { return cfg_.arc_cells * grid_.resolution(); }

  BinKey bin_of(const Pose2& p) const {
    const GridIndex c = grid_.world_to_cell(p.x, p.y);
    const double bin = 2.0 * M_PI / cfg_.yaw_bins;
    int iyaw = static_cast<int>(std::floor((p.yaw + M_PI) / bin));
    iyaw = ((iyaw % cfg_.yaw_bins) + cfg_.yaw_bins) % cfg_.yaw_bins;
    return {c.i, c.j, iyaw};
  }

  bool cell_free(double x, double y) const {
    const GridIndex c = grid_.world_to_cell(x, y);
    return grid_.in_bounds(c.i, c.j) &&
           grid_.traversable(c.i, c.j, cfg_.optimistic_unknown);
  }

  static Pose2 roll_out(const Pose2& p, double curvature, double s, bool reverse) {
    const double dir = reverse ? -1.0 : 1.0;
    if (std::abs(curvature) < 1e-12) {
      return Pose2(p.x + dir * s * std::cos(p.yaw), p.y + dir * s * std::sin(p.yaw),
                   p.yaw);
    }
    const double yaw1 = p.yaw + dir * curvature * s;
    return Pose2(p.x + (std::sin(yaw1) - std::sin(p.yaw)) / curvature,
                 p.y + (std::cos(p.yaw) - std::cos(yaw1)) / curvature, yaw1);
  }

  bool motion_free(const Pose2& from, double curvature, double s, bool reverse) const {
    const double step = 0.5 * grid_.resolution();
    const int n = std::max(1, static_cast<int>(std::ceil(s / step)));
    for (int i = 1; i <= n; ++i) {
      const Pose2 p = roll_out(from, curvature, s * i / n, reverse);
      if (!cell_free(p.x, p.y)) return false;
    }
    return true;
  }

  bool apply_primitive(const Pose2& from, const Primitive& prim, Pose2* next,
                       double* cost) const {
    switch (prim.kind) {
      case Primitive::Straight: {
        const bool reverse = prim.label == "reverse";
        const double s = arc_length();
        if (!motion_free(from, 0.0, s, reverse)) return false;
        *next = roll_out(from, 0.0, s, reverse);
        *cost = cfg_.w_forward * s * (reverse ? 2.0 : 1.0);
        return true;
      }
      case Primitive::Arc: {
        const double s = arc_length();
        if (!motion_free(from, prim.curvature, s, false)) return false;
        *next = roll_out(from, prim.curvature, s, false);
        *cost = cfg_.w_forward * s + cfg_.w_curvature * std::abs(prim.curvature) * s;
        return true;
      }
      case Primitive::Rotate: {
        *next = Pose2(from.x, from.y, from.yaw + prim.dyaw);
        *cost = cfg_.w_rotate_per_bin;
        return true;
      }
    }
    return false;
  }

  bool at_goal(const Pose2& p) const {
    return std::hypot(p.x - goal_.x, p.y - goal_.y) <= cfg_.goal_pos_tol &&
           std::abs(normalize_angle(p.yaw - goal_.yaw)) <= cfg_.goal_yaw_tol;
  }

  double heuristic(const Pose2& p) const {
    const double euclid = std::hypot(p.x - goal_.x, p.y - goal_.y);
    double h = std::max(0.0, euclid - cfg_.goal_pos_tol);
    const GridIndex c = grid_.world_to_cell(p.x, p.y);
    if (grid_.in_bounds(c.i, c.j)) {
      const double gd = goal_dist_[static_cast<size_t>(c.j) * grid_.width() + c.i];
      if (!std::isfinite(gd)) return kInf;
      // deflate the 8-connected metrication overestimate (<= sqrt(4-2*sqrt(2)))
      // and the cell-center / goal-tolerance slack to stay admissible
      const double slack = cfg_.goal_pos_tol + std::sqrt(2.0) * grid_.resolution();
      h = std::max(h, gd / 1.0824 - slack);
    }
    return h;
  }

  // Direct curvature-bounded arc to the goal position plus a terminal
  // in-place rotation; the standard completeness/speed aid.
  int try_analytic(int node_idx) {
    const Pose2 from = nodes_[node_idx].pose;
    const double dx = goal_.x - from.x, dy = goal_.y - from.y;
    const double d = std::hypot(dx, dy);
    if (d < 1e-9) return -1;
    const double alpha = normalize_angle(std::atan2(dy, dx) - from.yaw);
    if (std::abs(alpha) > 0.5 * M_PI) return -1;

    double kappa_max = 0.0;
    for (double k : cfg_.curvatures) kappa_max = std::max(kappa_max, k);
    const double kappa = 2.0 * std::sin(alpha) / d;
    if (std::abs(kappa) > kappa_max) return -1;

    const double s = std::abs(kappa) < 1e-12 ? d : 2.0 * alpha / kappa * 1.0;
    if (s <= 0.0 || !motion_free(from, kappa, s, false)) return -1;

    // record the arc in primitive-length segments so downstream consumers
    // (lookahead, validity checks) see a normally sampled path
    const int segments = std::max(1, static_cast<int>(std::ceil(s / arc_length())));
    int leaf = node_idx;
    for (int i = 1; i <= segments; ++i) {
      const double si = s * i / segments;
      const Pose2 p = roll_out(from, kappa, si, false);
      const double cost = (cfg_.w_forward + cfg_.w_curvature * std::abs(kappa)) *
                          (s / segments);
      nodes_.push_back({p, nodes_[leaf].g + cost, leaf, "arc"});
      leaf = static_cast<int>(nodes_.size() - 1);
    }
    const Pose2 arrive = nodes_[leaf].pose;

    const double yaw_err = normalize_angle(goal_.yaw - arrive.yaw);
    const double bin = 2.0 * M_PI / cfg_.yaw_bins;
    const double rot_cost = cfg_.w_rotate_per_bin * std::abs(yaw_err) / bin;
    if (std::abs(yaw_err) > cfg_.goal_yaw_tol) {
      nodes_.push_back({Pose2(arrive.x, arrive.y, goal_.yaw),
                        nodes_[leaf].g + rot_cost, leaf, "rot"});
      leaf = static_cast<int>(nodes_.size() - 1);
    }
    return leaf;
  }

  Path reconstruct(int leaf) const {
    Path path;
    std::vector<int> chain;
    for (int n = leaf; n >= 0; n = nodes_[n].parent) chain.push_back(n);
    std::reverse(chain.begin(), chain.end());
    for (int n : chain) {
      path.states.push_back({nodes_[n].pose, nodes_[n].primitive, nodes_[n].g});
    }
    path.total_cost = nodes_[leaf].g;
    return path;
  }

  const OccupancyGrid& grid_;
  const PlannerConfig& cfg_;
  Pose2 goal_;
  std::vector<double> goal_dist_;
  std::vector<Node> nodes_;
};

}  // namespace

std::vector<double> Path::arc_lengths() const {
  std::vector<double> s(states.size(), 0.0);
  for (size_t i = 1; i < states.size(); ++i) {
    s[i] = s[i - 1] + std::hypot(states[i].pose.x - states[i - 1].pose.x,
                                 states[i].pose.y - states[i - 1].pose.y);
  }
  return s;
}

PlanResult plan_global(const OccupancyGrid& inflated, const Pose2& start,
                       const Pose2& goal, const PlannerConfig& cfg) {
  HybridSearch search(inflated, cfg);
  PlanResult r = search.run(start, goal, cfg.max_expansions);
  if (r.status == PlanStatus::BudgetExhausted) r.status = PlanStatus::NoPath;
  return r;
}

namespace {

// closest point on the polyline; returns (arc length, index of nearest state,
// distance)
struct ClosestPoint {
  double s = 0.0;
  size_t state = 0;
  double distance = 0.0;
};

ClosestPoint closest_on_path(const Path& path, const Pose2& robot) {
  const auto arcs = path.arc_lengths();
  ClosestPoint best;
  best.distance = kInf;
  for (size_t i = 0; i + 1 < path.states.size(); ++i) {
    const auto& a = path.states[i].pose;
    const auto& b = path.states[i + 1].pose;
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = 0.0;
    if (len2 > 1e-18) {
      t = std::clamp(((robot.x - a.x) * vx + (robot.y - a.y) * vy) / len2, 0.0, 1.0);
    }
    const double px = a.x + t * vx, py = a.y + t * vy;
    const double d = std::hypot(robot.x - px, robot.y - py);
    if (d < best.distance) {
      best.distance = d;
      best.s = arcs[i] + t * std::sqrt(len2);
      best.state = t < 0.5 ? i : i + 1;
    }
  }
  if (path.states.size() == 1) {
    best.distance = std::hypot(robot.x - path.states[0].pose.x,
                               robot.y - path.states[0].pose.y);
    best.s = 0.0;
    best.state = 0;
  }
  return best;
}

}  // namespace

Pose2 select_local_target(const Path& global_path, const Pose2& robot, double horizon) {
  if (global_path.empty()) throw EmptyPath("select_local_target: empty path");
  const auto arcs = global_path.arc_lengths();
  const ClosestPoint cp = closest_on_path(global_path, robot);
  const double target_s = cp.s + horizon;

  size_t best = global_path.states.size() - 1;
  double best_err = kInf;
  for (size_t i = 0; i < arcs.size(); ++i) {
    const double err = std::abs(arcs[i] - target_s);
    if (err < best_err) {
      best_err = err;
      best = i;
    }
  }
  if (target_s >= arcs.back()) best = arcs.size() - 1;
  return global_path.states[best].pose;
}

PlanResult plan_local(const OccupancyGrid& inflated, const Pose2& robot,
                      const Pose2& local_target, const PlannerConfig& cfg) {
  // windowed sub-grid centered on the robot
  const double half = 0.5 * cfg.local_window;
  const GridIndex lo = inflated.world_to_cell(robot.x - half, robot.y - half);
  const GridIndex hi = inflated.world_to_cell(robot.x + half, robot.y + half);
  const int i0 = std::max(0, lo.i), j0 = std::max(0, lo.j);
  const int i1 = std::min(inflated.width() - 1, hi.i);
  const int j1 = std::min(inflated.height() - 1, hi.j);
  if (i1 < i0 || j1 < j0) return {PlanStatus::InvalidStart, {}, 0};

  const double res = inflated.resolution();
  OccupancyGrid window(res,
                       Pose2(inflated.origin().x + i0 * res,
                             inflated.origin().y + j0 * res, inflated.origin().yaw),
                       i1 - i0 + 1, j1 - j0 + 1);
  for (int j = j0; j <= j1; ++j) {
    for (int i = i0; i <= i1; ++i) window.at(i - i0, j - j0) = inflated.at(i, j);
  }

  // pull an out-of-window target back along the sight line
  Pose2 target = local_target;
  const double dx = target.x - robot.x, dy = target.y - robot.y;
  const double span = std::max(std::abs(dx), std::abs(dy));
  if (span > half - res) {
    const double scale = (half - 2.0 * res) / span;
    target = Pose2(robot.x + dx * scale, robot.y + dy * scale, target.yaw);
  }

  HybridSearch search(window, cfg);
  return search.run(robot, target, cfg.local_max_expansions);
}

bool needs_global_replan(const Pose2& robot, const Path& global_path,
                         const OccupancyGrid& inflated, const PlannerConfig& cfg) {
  if (global_path.empty()) return true;
  const ClosestPoint cp = closest_on_path(global_path, robot);
  if (cp.distance > cfg.replan_lateral) return true;
  const double heading_dev = std::abs(
      normalize_angle(robot.yaw - global_path.states[cp.state].pose.yaw));
  if (heading_dev > cfg.replan_heading) return true;

  for (size_t i = cp.state; i < global_path.states.size(); ++i) {
    const auto& p = global_path.states[i].pose;
    const GridIndex c = inflated.world_to_cell(p.x, p.y);
    if (!inflated.in_bounds(c.i, c.j) ||
        !inflated.traversable(c.i, c.j, cfg.optimistic_unknown)) {
      return true;
    }
  }
  return false;
}

void export_path_csv(const Path& path, const std::string& file) {
  std::ofstream os(file);
  os << "s,x,y,yaw,primitive_label,cost_to_come\n";
  os.precision(17);
  const auto arcs = path.arc_lengths();
  for (size_t i = 0; i < path.states.size(); ++i) {
    const auto& st = path.states[i];
    os << arcs[i] << ',' << st.pose.x << ',' << st.pose.y << ',' << st.pose.yaw << ','
       << st.primitive << ',' << st.cost_to_come << '\n';
  }
}

}  // namespace voxnav
