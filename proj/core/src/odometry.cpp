#include "voxnav/odometry.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <fstream>

namespace voxnav {

namespace {

// regularized lower incomplete gamma P(a, x), series + continued fraction
double gammp(double a, double x) {
  if (x <= 0.0) return 0.0;
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 200; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-14) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // continued fraction for Q(a,x)
  double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i < 200; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-14) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

void symmetrize(Eigen::Matrix<double, 12, 12>& p) {
  p = 0.5 * (p + p.transpose()).eval();
}

// Generic error-state update with Mahalanobis gating and Joseph-form
// covariance. Returns false when the gate rejects.
bool apply_update(EkfState& state, const Eigen::VectorXd& innovation,
                  const Eigen::MatrixXd& H, const Eigen::MatrixXd& R,
                  const EkfConfig& cfg) {
  const auto& P = state.covariance;
  const Eigen::MatrixXd S = H * P * H.transpose() + R;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  const double maha2 = innovation.dot(ldlt.solve(innovation));
  const int dof = static_cast<int>(innovation.size());
  if (maha2 > chi2_quantile(dof, cfg.gate_quantile)) return false;

  const Eigen::MatrixXd K = P * H.transpose() * ldlt.solve(Eigen::MatrixXd::Identity(dof, dof));
  const Eigen::VectorXd dx = K * innovation;

  state.pose = Pose3(state.pose.rotation_matrix() * so3_exp(dx.segment<3>(0)),
                     state.pose.translation() + dx.segment<3>(3));
  state.velocity += dx.segment<3>(6);
  state.gyro_bias += dx.segment<3>(9);

  const Eigen::Matrix<double, 12, 12> IKH =
      Eigen::Matrix<double, 12, 12>::Identity() - K * H;
  state.covariance = IKH * P * IKH.transpose() + K * R * K.transpose();
  symmetrize(state.covariance);
  return true;
}

Eigen::MatrixXd floor_meas_cov(const Eigen::MatrixXd& R, double floor) {
  Eigen::MatrixXd out = R;
  for (int i = 0; i < out.rows(); ++i) out(i, i) = std::max(out(i, i), floor);
  return out;
}

}  // namespace

double chi2_quantile(int dof, double quantile) {
  // bisection on the regularized incomplete gamma CDF
  double lo = 0.0, hi = dof + 40.0 * std::sqrt(2.0 * dof);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (gammp(0.5 * dof, 0.5 * mid) < quantile) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

Mat6 EkfState::pose_covariance() const {
  Mat6 out;
  out.topLeftCorner<3, 3>() = covariance.block<3, 3>(3, 3);       // trans
  out.topRightCorner<3, 3>() = covariance.block<3, 3>(3, 0);
  out.bottomLeftCorner<3, 3>() = covariance.block<3, 3>(0, 3);
  out.bottomRightCorner<3, 3>() = covariance.block<3, 3>(0, 0);   // rot
  return out;
}

Eigen::Matrix<double, 12, 12> ekf_predict_jacobian(const EkfState& state,
                                                   const ImuPayload& imu, double dt) {
  const Vec3 w_hat = (imu.angular_rate - state.gyro_bias) * dt;
  const Mat3 R = state.pose.rotation_matrix();
  const Mat3 fx = skew(imu.linear_acceleration);

  Eigen::Matrix<double, 12, 12> F = Eigen::Matrix<double, 12, 12>::Identity();
  F.block<3, 3>(0, 0) = so3_exp(w_hat).transpose();
  F.block<3, 3>(0, 9) = -so3_right_jacobian(w_hat) * dt;
  F.block<3, 3>(3, 0) = -0.5 * R * fx * dt * dt;
  F.block<3, 3>(3, 6) = Mat3::Identity() * dt;
  F.block<3, 3>(6, 0) = -R * fx * dt;
  return F;
}

EkfState ekf_predict(const EkfState& state, const ImuPayload& imu, double dt,
                     const EkfConfig& cfg) {
  if (!(dt > 0.0 && dt <= 0.1)) throw NonFiniteInput("ekf_predict: dt outside (0, 0.1]");
  if (!imu.angular_rate.allFinite() || !imu.linear_acceleration.allFinite()) {
    throw NonFiniteInput("ekf_predict: non-finite imu payload");
  }

  const Vec3 g_world(0.0, 0.0, -kGravity);
  const Mat3 R = state.pose.rotation_matrix();
  const Vec3 w_hat = imu.angular_rate - state.gyro_bias;
  const Vec3 a_world = R * imu.linear_acceleration + g_world;

  EkfState next = state;
  next.pose = Pose3(R * so3_exp(w_hat * dt), Vec3::Zero());
  const Vec3 v_new = state.velocity + a_world * dt;
  // trapezoidal position update keeps discretization bias ~O(dt^3)
  next.pose = Pose3(next.pose.rotation(),
                    state.pose.translation() + 0.5 * (state.velocity + v_new) * dt);
  next.velocity = v_new;

  const auto F = ekf_predict_jacobian(state, imu, dt);
  Eigen::Matrix<double, 12, 12> Q = Eigen::Matrix<double, 12, 12>::Zero();
  const double sg2 = cfg.sigma_gyro * cfg.sigma_gyro;
  const double sa2 = cfg.sigma_acc * cfg.sigma_acc;
  const double sb2 = cfg.sigma_gyro_bias_walk * cfg.sigma_gyro_bias_walk;
  Q.block<3, 3>(0, 0) = Mat3::Identity() * sg2 * dt * dt;
  Q.block<3, 3>(3, 3) = Mat3::Identity() * 0.25 * sa2 * dt * dt * dt * dt;
  Q.block<3, 3>(6, 6) = Mat3::Identity() * sa2 * dt * dt;
  Q.block<3, 3>(9, 9) = Mat3::Identity() * sb2 * dt;

  next.covariance = F * state.covariance * F.transpose() + Q;
  symmetrize(next.covariance);
  return next;
}

EkfState ekf_update_velocity(const EkfState& state, const Vec3& meas, const Mat3& R_meas,
                             const EkfConfig& cfg, EkfUpdateStats* stats) {
  const Mat3 R = state.pose.rotation_matrix();
  const Vec3 pred = R.transpose() * state.velocity;

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(3, 12);
  H.block<3, 3>(0, 0) = skew(R.transpose() * state.velocity);
  H.block<3, 3>(0, 6) = R.transpose();

  EkfState next = state;
  const bool ok = apply_update(next, meas - pred, H,
                               floor_meas_cov(R_meas, cfg.min_meas_variance), cfg);
  if (stats) (ok ? stats->accepted : stats->rejected)++;
  return ok ? next : state;
}

EkfState ekf_update_visual_delta(const EkfState& state, const Pose3& prev_anchor,
                                 const Pose3& meas_delta, const Mat6& R_meas,
                                 const EkfConfig& cfg, EkfUpdateStats* stats) {
  const Pose3 pred = prev_anchor.inverse().compose(state.pose);
  const Mat3 Ra = prev_anchor.rotation_matrix();

  const Mat3 E = pred.rotation_matrix().transpose() * meas_delta.rotation_matrix();
  const Vec3 e_rot = so3_log(E);

  Eigen::VectorXd y(6);
  y.head<3>() = meas_delta.translation() - pred.translation();
  y.tail<3>() = e_rot;

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(6, 12);
  H.block<3, 3>(0, 3) = Ra.transpose();
  H.block<3, 3>(3, 0) = so3_right_jacobian_inv(e_rot) * E.transpose();

  EkfState next = state;
  const bool ok = apply_update(next, y, H,
                               floor_meas_cov(R_meas, cfg.min_meas_variance), cfg);
  if (stats) (ok ? stats->accepted : stats->rejected)++;
  return ok ? next : state;
}

EkfState ekf_update_global_fix(const EkfState& state, const Pose3& fix, const Mat6& R_meas,
                               const EkfConfig& cfg, EkfUpdateStats* stats) {
  const bool pos_only = cfg.global_fix_position_only;
  const int dim = pos_only ? 3 : 6;

  Eigen::VectorXd y(dim);
  y.head<3>() = fix.translation() - state.pose.translation();

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, 12);
  H.block<3, 3>(0, 3) = Mat3::Identity();

  if (!pos_only) {
    const Mat3 E = state.pose.rotation_matrix().transpose() * fix.rotation_matrix();
    const Vec3 e_rot = so3_log(E);
    y.tail<3>() = e_rot;
    H.block<3, 3>(3, 0) = so3_right_jacobian_inv(e_rot) * E.transpose();
  }

  EkfState next = state;
  const bool ok = apply_update(
      next, y, H, floor_meas_cov(R_meas.topLeftCorner(dim, dim), cfg.min_meas_variance), cfg);
  if (stats) (ok ? stats->accepted : stats->rejected)++;
  return ok ? next : state;
}

// ---------------------------------------------------------------------------

FusedOdometry::FusedOdometry(const EkfConfig& cfg, const EkfState& initial)
    : cfg_(cfg), state_(initial), prev_state_(initial) {}

void FusedOdometry::check_order(SensorKind kind, double t) {
  double& last = last_stream_time_[static_cast<int>(kind)];
  if (t < last) throw OutOfOrderSample("fused odometry: stream timestamp regressed");
  last = t;
}

std::vector<FusedOdometryOutput> FusedOdometry::feed(const SensorSample& sample) {
  check_order(sample.kind, sample.timestamp);

  switch (sample.kind) {
    case SensorKind::Imu: {
      const auto& p = std::get<ImuPayload>(sample.payload);
      // the initial state is anchored at t = 0; a stream that starts much
      // later re-anchors instead of predicting across the gap
      const double since = sample.timestamp - std::max(last_imu_time_, 0.0);
      if ((last_imu_time_ >= 0.0 || sample.timestamp <= 0.1) && since > 0.0 &&
          since <= 0.1) {
        prev_state_ = state_;
        prev_state_time_ = state_time_;
        state_ = ekf_predict(state_, p, since, cfg_);
        state_time_ = sample.timestamp;
      } else {
        state_time_ = sample.timestamp;
        prev_state_time_ = sample.timestamp;
      }
      started_ = true;
      last_imu_time_ = sample.timestamp;
      break;
    }
    case SensorKind::BodyVelocity: {
      const auto& p = std::get<BodyVelocityPayload>(sample.payload);
      const Mat3 R = Mat3::Identity() * cfg_.meas_sigma_velocity * cfg_.meas_sigma_velocity;
      state_ = ekf_update_velocity(state_, p.velocity, R, cfg_, &stats_);
      break;
    }
    case SensorKind::VisualDelta: {
      const auto& p = std::get<VisualDeltaPayload>(sample.payload);
      if (have_visual_anchor_) {
        state_ = ekf_update_visual_delta(state_, visual_anchor_, p.delta,
                                         p.covariance, cfg_, &stats_);
      }
      visual_anchor_ = state_.pose;
      have_visual_anchor_ = true;
      break;
    }
    case SensorKind::Depth:
      break;  // depth is consumed by the mapper, not the filter
  }
  return advance_outputs(sample.timestamp);
}

std::vector<FusedOdometryOutput> FusedOdometry::feed_global_fix(double timestamp,
                                                                const Pose3& fix,
                                                                const Mat6& R) {
  state_ = ekf_update_global_fix(state_, fix, R, cfg_, &stats_);
  return advance_outputs(timestamp);
}

FusedOdometryOutput FusedOdometry::interpolate(double t) const {
  FusedOdometryOutput out;
  out.timestamp = t;
  const double span = state_time_ - prev_state_time_;
  if (span <= 1e-12 || t >= state_time_) {
    out.pose = state_.pose;
    out.velocity.linear = state_.velocity;
    out.covariance = state_.pose_covariance();
    return out;
  }
  const double alpha = std::clamp((t - prev_state_time_) / span, 0.0, 1.0);
  const Vec6 xi = se3_log(prev_state_.pose.inverse().compose(state_.pose));
  out.pose = prev_state_.pose.compose(se3_exp(alpha * xi));
  out.velocity.linear = (1.0 - alpha) * prev_state_.velocity + alpha * state_.velocity;
  out.covariance = state_.pose_covariance();
  return out;
}

std::vector<FusedOdometryOutput> FusedOdometry::advance_outputs(double t_now) {
  std::vector<FusedOdometryOutput> out;
  if (!started_) return out;
  while ((outputs_emitted_ + 1) * cfg_.output_period <= t_now + 1e-9) {
    const double t = (outputs_emitted_ + 1) * cfg_.output_period;
    out.push_back(interpolate(t));
    ++outputs_emitted_;
  }
  return out;
}

void export_odometry_log(const std::vector<FusedOdometryOutput>& outputs,
                         const std::string& csv_path) {
  std::ofstream csv(csv_path);
  csv << "t,x,y,z,qw,qx,qy,qz,vx,vy,vz\n";
  csv.precision(17);
  std::ofstream cov(csv_path + ".cov", std::ios::binary);
  for (const auto& o : outputs) {
    const auto& q = o.pose.rotation();
    const auto& t = o.pose.translation();
    csv << o.timestamp << ',' << t.x() << ',' << t.y() << ',' << t.z() << ','
        << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z() << ','
        << o.velocity.linear.x() << ',' << o.velocity.linear.y() << ','
        << o.velocity.linear.z() << '\n';
    // row-major f64 little-endian; matches in-memory layout on this target
    Eigen::Matrix<double, 6, 6, Eigen::RowMajor> m = o.covariance;
    cov.write(reinterpret_cast<const char*>(m.data()), sizeof(double) * 36);
  }
}

}  // namespace voxnav
