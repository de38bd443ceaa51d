#include "voxnav/posegraph.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace voxnav {

uint64_t PoseGraph::add_node(NodeKind kind, const Pose3& pose, uint64_t ref_id,
                             std::optional<uint64_t> parent) {
  GraphNode n;
  n.id = next_id_++;
  n.kind = kind;
  n.pose = pose;
  n.ref_id = ref_id;
  n.parent_id = parent;
  const bool first = nodes_.empty();
  nodes_.emplace(n.id, n);

  if (first) {
    // gauge: strong prior on node 0 instead of variable elimination
    Factor prior;
    prior.kind = FactorKind::AnchorPrior;
    prior.from = prior.to = n.id;
    prior.measured = pose;
    prior.information = Mat6::Identity() * 1e6;
    factors_.push_back(prior);
  }
  return n.id;
}

void PoseGraph::add_factor(const Factor& f) { factors_.push_back(f); }

void PoseGraph::merge_optimized(const PoseGraph& snapshot) {
  // live poses before merging; snapshot-era nodes still hold the estimates
  // the snapshot was taken with
  std::map<uint64_t, Pose3> pre;
  for (const auto& [id, n] : nodes_) pre[id] = n.pose;

  for (auto& [id, node] : nodes_) {
    auto it = snapshot.nodes().find(id);
    if (it != snapshot.nodes().end()) {
      node.pose = it->second.pose;
      continue;
    }
    // walk the parent chain to a node the snapshot knows about
    std::optional<uint64_t> p = node.parent_id;
    while (p && snapshot.nodes().find(*p) == snapshot.nodes().end()) {
      p = nodes_.at(*p).parent_id;
    }
    if (!p) continue;
    const Pose3 correction = snapshot.nodes().at(*p).pose.compose(pre.at(*p).inverse());
    node.pose = correction.compose(node.pose);
  }
}

Vec6 factor_residual(const Factor& f, const Pose3& pose_i, const Pose3& pose_j,
                     Mat6* J_i, Mat6* J_j) {
  if (f.kind == FactorKind::AnchorPrior) {
    const Pose3 err = f.measured.inverse().compose(pose_i);
    const Vec6 r = se3_log(err);
    if (J_i) *J_i = se3_right_jacobian_inv(r);
    if (J_j) J_j->setZero();
    return r;
  }
  const Pose3 rel = pose_i.inverse().compose(pose_j);
  const Pose3 err = f.measured.inverse().compose(rel);
  const Vec6 r = se3_log(err);
  const Mat6 jr_inv = se3_right_jacobian_inv(r);
  if (J_j) *J_j = jr_inv;
  if (J_i) *J_i = -jr_inv * se3_adjoint(rel.inverse());
  return r;
}

namespace {

struct RobustTerm {
  double cost = 0.0;    // rho(e)
  double weight = 1.0;  // IRLS weight
  double chi2 = 0.0;    // unrobustified r^T Omega r
};

RobustTerm robustify(const Vec6& r, const Mat6& info, double huber_delta) {
  RobustTerm t;
  t.chi2 = r.dot(info * r);
  const double e = std::sqrt(std::max(t.chi2, 0.0));
  if (huber_delta <= 0.0 || e <= huber_delta) {
    t.cost = 0.5 * t.chi2;
    t.weight = 1.0;
  } else {
    t.cost = huber_delta * (e - 0.5 * huber_delta);
    t.weight = huber_delta / e;
  }
  return t;
}

double total_cost(const PoseGraph& g, std::vector<double>* chi2 = nullptr) {
  double c = 0.0;
  if (chi2) chi2->clear();
  for (const auto& f : g.factors()) {
    const Vec6 r = factor_residual(f, g.node(f.from).pose, g.node(f.to).pose);
    const RobustTerm t = robustify(r, f.information, f.huber_delta);
    c += t.cost;
    if (chi2) chi2->push_back(t.chi2);
  }
  return c;
}

}  // namespace

OptimizeReport optimize(PoseGraph& graph, const OptimizeConfig& cfg) {
  OptimizeReport report;
  const size_t n_nodes = graph.nodes().size();
  if (n_nodes == 0) return report;

  std::map<uint64_t, int> idx;
  int next = 0;
  for (const auto& [id, node] : graph.nodes()) idx[id] = next++;
  const int dim = 6 * static_cast<int>(n_nodes);

  report.initial_cost = total_cost(graph, &report.chi2_per_factor);
  double cost = report.initial_cost;
  double lambda = cfg.lambda_init;

  if (!std::isfinite(cost) || cost < 0.0) {
    // an information matrix violated its PSD invariant
    report.status = OptimizeStatus::SingularNormalEquations;
    report.final_cost = cost;
    return report;
  }
  if (cost == 0.0) {
    report.final_cost = cost;
    return report;  // already optimal, zero iterations of change
  }

  std::map<uint64_t, Pose3> best;
  for (const auto& [id, node] : graph.nodes()) best[id] = node.pose;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    // assemble the (damped) normal equations around the current estimate
    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);

    for (const auto& f : graph.factors()) {
      Mat6 Ji, Jj;
      const Vec6 r =
          factor_residual(f, graph.node(f.from).pose, graph.node(f.to).pose, &Ji, &Jj);
      const RobustTerm t = robustify(r, f.information, f.huber_delta);
      const Mat6 w_info = t.weight * f.information;

      const int bi = 6 * idx[f.from];
      const Mat6 Hii = Ji.transpose() * w_info * Ji;
      for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b) trips.emplace_back(bi + a, bi + b, Hii(a, b));
      g.segment<6>(bi) += Ji.transpose() * (w_info * r);

      if (f.kind != FactorKind::AnchorPrior) {
        const int bj = 6 * idx[f.to];
        const Mat6 Hjj = Jj.transpose() * w_info * Jj;
        const Mat6 Hij = Ji.transpose() * w_info * Jj;
        for (int a = 0; a < 6; ++a) {
          for (int b = 0; b < 6; ++b) {
            trips.emplace_back(bj + a, bj + b, Hjj(a, b));
            trips.emplace_back(bi + a, bj + b, Hij(a, b));
            trips.emplace_back(bj + a, bi + b, Hij(b, a));
          }
        }
        g.segment<6>(bj) += Jj.transpose() * (w_info * r);
      }
    }

    Eigen::SparseMatrix<double> H(dim, dim);
    H.setFromTriplets(trips.begin(), trips.end());
    Eigen::VectorXd diag(dim);
    for (int i = 0; i < dim; ++i) diag[i] = std::max(H.coeff(i, i), 1e-12);

    bool stepped = false;
    while (!stepped) {
      Eigen::SparseMatrix<double> Hd = H;
      for (int i = 0; i < dim; ++i) Hd.coeffRef(i, i) = diag[i] * (1.0 + lambda);

      Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(Hd);
      if (llt.info() != Eigen::Success) {
        report.status = OptimizeStatus::SingularNormalEquations;
        report.final_cost = cost;
        for (auto& [id, node] : graph.nodes()) node.pose = best[id];
        return report;
      }
      const Eigen::VectorXd delta = llt.solve(-g);

      for (auto& [id, node] : graph.nodes()) {
        node.pose = best[id].compose(se3_exp(delta.segment<6>(6 * idx[id])));
      }
      const double new_cost = total_cost(graph);

      if (new_cost < cost) {
        // accepted step
        for (const auto& [id, node] : graph.nodes()) best[id] = node.pose;
        const double drop = cost - new_cost;
        cost = new_cost;
        lambda = std::max(lambda * cfg.lambda_down, 1e-12);
        ++report.iterations;
        stepped = true;
        if (drop < cfg.rel_tolerance * std::max(1.0, cost)) {
          report.status = OptimizeStatus::Converged;
          report.final_cost = cost;
          total_cost(graph, &report.chi2_per_factor);
          return report;
        }
      } else {
        for (auto& [id, node] : graph.nodes()) node.pose = best[id];
        lambda *= cfg.lambda_up;
        if (lambda > 1e10) {
          report.status = OptimizeStatus::Converged;  // damped to a standstill
          report.final_cost = cost;
          total_cost(graph, &report.chi2_per_factor);
          return report;
        }
      }
    }
  }

  report.status = OptimizeStatus::MaxIterations;
  report.final_cost = cost;
  total_cost(graph, &report.chi2_per_factor);
  return report;
}

void writeback_maplet_poses(const PoseGraph& graph, MapletSet& maplets) {
  for (const auto& [id, node] : graph.nodes()) {
    if (node.kind != NodeKind::Maplet) continue;
    if (Maplet* m = maplets.find(node.ref_id)) m->anchor_pose = node.pose;
  }
}

std::optional<uint64_t> add_keyframe(PoseGraph& graph, const Pose3& odom_pose,
                                     const Mat6& odom_pose_cov, const DepthImage& depth,
                                     const DepthCameraModel& cam,
                                     std::optional<uint64_t> active_maplet_node,
                                     const KeyframePolicy& policy) {
  if (!odom_pose.is_finite()) throw NonFiniteInput("add_keyframe: pose not finite");

  std::optional<uint64_t> prev = graph.last_keyframe();
  if (prev) {
    const Pose3 rel = graph.node(*prev).pose.inverse().compose(odom_pose);
    const double trans = rel.translation().norm();
    const double rot =
        2.0 * std::atan2(rel.rotation().vec().norm(), std::abs(rel.rotation().w()));
    if (trans <= policy.trans_threshold && rot <= policy.rot_threshold) {
      return std::nullopt;
    }
  }

  const uint64_t id = graph.add_node(NodeKind::Keyframe, odom_pose, 0, prev);

  if (prev) {
    const KeyframeRecord& prev_rec = *std::find_if(
        graph.keyframes().begin(), graph.keyframes().end(),
        [&](const KeyframeRecord& r) { return r.node_id == *prev; });
    Factor f;
    f.kind = FactorKind::Odometry;
    f.from = *prev;
    f.to = id;
    f.measured = prev_rec.pose_at_capture.inverse().compose(odom_pose);
    // relative information from the fused covariance, floored for stability
    Mat6 rel_cov = odom_pose_cov;
    for (int i = 0; i < 3; ++i) rel_cov(i, i) = std::max(rel_cov(i, i), 1e-6);
    for (int i = 3; i < 6; ++i) rel_cov(i, i) = std::max(rel_cov(i, i), 1e-6);
    f.information = rel_cov.inverse();
    f.information = 0.5 * (f.information + f.information.transpose()).eval();
    graph.add_factor(f);
  }

  if (active_maplet_node) {
    Factor obs;
    obs.kind = FactorKind::Odometry;  // rigid observation, high information
    obs.from = *active_maplet_node;
    obs.to = id;
    obs.measured = graph.node(*active_maplet_node).pose.inverse().compose(odom_pose);
    obs.information = Mat6::Identity() * policy.maplet_obs_information;
    graph.add_factor(obs);
  }

  KeyframeRecord rec;
  rec.node_id = id;
  rec.snapshot = depth_snapshot(depth, cam, policy.snapshot_stride);
  rec.signature = polar_signature(rec.snapshot);
  rec.pose_at_capture = odom_pose;
  graph.keyframes().push_back(std::move(rec));
  graph.set_last_keyframe(id);
  return id;
}

// ---------------------------------------------------------------------------
// interchange text format

namespace {
const char* kind_name(FactorKind k) {
  switch (k) {
    case FactorKind::Odometry: return "odometry";
    case FactorKind::LoopClosure: return "loop_closure";
    case FactorKind::AnchorPrior: return "anchor_prior";
  }
  return "odometry";
}
}  // namespace

void save_graph(const PoseGraph& graph, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_graph: cannot open " + path);
  os.precision(17);
  for (const auto& [id, n] : graph.nodes()) {
    const auto& q = n.pose.rotation();
    const auto& t = n.pose.translation();
    os << "NODE " << id << ' ' << (n.kind == NodeKind::Keyframe ? "keyframe" : "maplet")
       << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << t.x()
       << ' ' << t.y() << ' ' << t.z() << '\n';
  }
  for (const auto& f : graph.factors()) {
    const auto& q = f.measured.rotation();
    const auto& t = f.measured.translation();
    os << "FACTOR " << kind_name(f.kind) << ' ' << f.from << ' ' << f.to << ' ' << q.w()
       << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << t.x() << ' ' << t.y()
       << ' ' << t.z();
    for (int i = 0; i < 6; ++i) {
      for (int j = i; j < 6; ++j) os << ' ' << f.information(i, j);
    }
    os << '\n';
  }
}

PoseGraph load_graph(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_graph: cannot open " + path);
  PoseGraph g;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "NODE") {
      uint64_t id;
      std::string kind;
      double qw, qx, qy, qz, tx, ty, tz;
      ss >> id >> kind >> qw >> qx >> qy >> qz >> tx >> ty >> tz;
      const Pose3 pose(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz));
      // preserve the stored id ordering
      while (g.nodes().size() < id) {
        g.add_node(NodeKind::Keyframe, Pose3());
      }
      g.add_node(kind == "maplet" ? NodeKind::Maplet : NodeKind::Keyframe, pose);
    } else if (tag == "FACTOR") {
      Factor f;
      std::string kind;
      ss >> kind >> f.from >> f.to;
      double qw, qx, qy, qz, tx, ty, tz;
      ss >> qw >> qx >> qy >> qz >> tx >> ty >> tz;
      f.measured = Pose3(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz));
      for (int i = 0; i < 6; ++i) {
        for (int j = i; j < 6; ++j) {
          double v;
          ss >> v;
          f.information(i, j) = v;
          f.information(j, i) = v;
        }
      }
      if (kind == "loop_closure") {
        f.kind = FactorKind::LoopClosure;
        f.huber_delta = 1.0;
      } else if (kind == "anchor_prior") {
        f.kind = FactorKind::AnchorPrior;
      } else {
        f.kind = FactorKind::Odometry;
      }
      // skip the auto-prior added by add_node for the first node
      if (f.kind == FactorKind::AnchorPrior && !g.factors().empty() &&
          g.factors().front().kind == FactorKind::AnchorPrior) {
        g.factors().front() = f;
      } else {
        g.add_factor(f);
      }
    }
  }
  return g;
}

}  // namespace voxnav
