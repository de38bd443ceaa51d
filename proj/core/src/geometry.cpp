#include "voxnav/geometry.hpp"

#include <Eigen/Eigenvalues>

namespace voxnav {

namespace {
constexpr double kEps = 1e-12;
constexpr double kCutLocusMargin = 1e-6;
}  // namespace

double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(),
       v.z(), 0, -v.x(),
       -v.y(), v.x(), 0;
  return m;
}

Mat3 so3_exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 W = skew(phi);
  if (theta2 < kEps * kEps) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * W +
         ((1.0 - std::cos(theta)) / theta2) * W * W;
}

Vec3 so3_log(const Mat3& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double sin_half = v.norm();
  const double angle = 2.0 * std::atan2(sin_half, q.w());
  if (angle > M_PI - kCutLocusMargin) {
    throw RotationNearPi("so3_log: rotation angle within 1e-6 of pi");
  }
  if (sin_half < 1e-9) {
    return 2.0 * v;  // w ~ 1
  }
  return (angle / sin_half) * v;
}

Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 W = skew(phi);
  if (theta2 < kEps) {
    return Mat3::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + ((1.0 - std::cos(theta)) / theta2) * W +
         ((theta - std::sin(theta)) / (theta2 * theta)) * W * W;
}

Mat3 so3_right_jacobian(const Vec3& phi) { return so3_left_jacobian(-phi); }

Mat3 so3_left_jacobian_inv(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 W = skew(phi);
  if (theta2 < kEps) {
    return Mat3::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double theta = std::sqrt(theta2);
  const double half = 0.5 * theta;
  const double cot_half = std::cos(half) / std::sin(half);
  return Mat3::Identity() - 0.5 * W +
         ((1.0 / theta2) - cot_half / (2.0 * theta)) * W * W;
}

Mat3 so3_right_jacobian_inv(const Vec3& phi) { return so3_left_jacobian_inv(-phi); }

// ---------------------------------------------------------------------------

Pose3 Pose3::from_xyz_yaw(double x, double y, double z, double yaw) {
  Eigen::Quaterniond q(std::cos(0.5 * yaw), 0, 0, std::sin(0.5 * yaw));
  return Pose3(q, Vec3(x, y, z));
}

void Pose3::canonicalize() {
  q_.normalize();
  if (q_.w() < 0) q_.coeffs() = -q_.coeffs();
}

double Pose3::yaw() const {
  const double w = q_.w(), x = q_.x(), y = q_.y(), z = q_.z();
  return std::atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z));
}

Pose3 Pose3::compose(const Pose3& other) const {
  return Pose3(q_ * other.q_, q_ * other.t_ + t_);
}

Pose3 Pose3::inverse() const {
  const Eigen::Quaterniond qi = q_.conjugate();
  return Pose3(qi, qi * (-t_));
}

Pose3 se3_exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  const Mat3 R = so3_exp(phi);
  const Vec3 t = so3_left_jacobian(phi) * rho;
  return Pose3(R, t);
}

Vec6 se3_log(const Pose3& p) {
  const Vec3 phi = so3_log(p.rotation_matrix());
  const Vec3 rho = so3_left_jacobian_inv(phi) * p.translation();
  Vec6 xi;
  xi << rho, phi;
  return xi;
}

Mat6 se3_adjoint(const Pose3& p) {
  const Mat3 R = p.rotation_matrix();
  Mat6 adj = Mat6::Zero();
  adj.topLeftCorner<3, 3>() = R;
  adj.topRightCorner<3, 3>() = skew(p.translation()) * R;
  adj.bottomRightCorner<3, 3>() = R;
  return adj;
}

namespace {

// Barfoot's Q matrix: the off-diagonal block of the SE(3) left Jacobian.
Mat3 se3_q_matrix(const Vec3& rho, const Vec3& phi) {
  const Mat3 rx = skew(rho);
  const Mat3 px = skew(phi);
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);

  double a, b, c;  // series coefficients
  if (theta < 1e-4) {
    a = 1.0 / 6.0 - theta2 / 120.0;
    b = 1.0 / 24.0 - theta2 / 720.0;
    c = -1.0 / 120.0 + theta2 / 5040.0;
  } else {
    const double st = std::sin(theta), ct = std::cos(theta);
    const double theta4 = theta2 * theta2;
    a = (theta - st) / (theta2 * theta);
    b = (0.5 * theta2 + ct - 1.0) / theta4;
    c = (theta - st - theta2 * theta / 6.0) / (theta4 * theta);
  }

  return 0.5 * rx + a * (px * rx + rx * px + px * rx * px) +
         b * (px * px * rx + rx * px * px - 3.0 * px * rx * px) +
         0.5 * (b + 3.0 * c) * (px * rx * px * px + px * px * rx * px);
}

Mat6 se3_left_jacobian_inv(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  const Mat3 jl_inv = so3_left_jacobian_inv(phi);
  const Mat3 q = se3_q_matrix(rho, phi);
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = jl_inv;
  out.topRightCorner<3, 3>() = -jl_inv * q * jl_inv;
  out.bottomRightCorner<3, 3>() = jl_inv;
  return out;
}

}  // namespace

Mat6 se3_right_jacobian_inv(const Vec6& xi) { return se3_left_jacobian_inv(-xi); }

// ---------------------------------------------------------------------------

Covariance::Covariance(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) throw NonFiniteInput("Covariance: non-finite entries");
  if (m.rows() != m.cols()) throw GeometryMismatch("Covariance: not square");
  m_ = 0.5 * (m + m.transpose());
  if (!is_psd(m_)) {
    throw std::invalid_argument("Covariance: matrix is not PSD within tolerance");
  }
}

bool Covariance::is_psd(const Eigen::MatrixXd& m, double tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) return false;
  return es.eigenvalues().minCoeff() >= -tol;
}

}  // namespace voxnav
