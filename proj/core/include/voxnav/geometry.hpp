#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>

#include "voxnav/errors.hpp"

namespace voxnav {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Normalize an angle to (-pi, pi]. Half-open at -pi so every yaw has a
/// unique representative (planner state hashing relies on this).
double normalize_angle(double a);

// ---------------------------------------------------------------------------
// SO(3) helpers. Tangent vectors are rotation vectors (axis * angle).

Mat3 skew(const Vec3& v);
Mat3 so3_exp(const Vec3& phi);
Vec3 so3_log(const Mat3& R);           // throws RotationNearPi at the cut locus
Mat3 so3_left_jacobian(const Vec3& phi);
Mat3 so3_right_jacobian(const Vec3& phi);
Mat3 so3_left_jacobian_inv(const Vec3& phi);
Mat3 so3_right_jacobian_inv(const Vec3& phi);

// ---------------------------------------------------------------------------

/// Rigid transform in SE(3). Unit quaternion with canonical sign w >= 0;
/// re-normalized after every operation so equality is bit-testable.
class Pose3 {
 public:
  Pose3() : q_(1, 0, 0, 0), t_(0, 0, 0) {}
  Pose3(const Eigen::Quaterniond& q, const Vec3& t) : q_(q), t_(t) { canonicalize(); }
  Pose3(const Mat3& R, const Vec3& t) : q_(R), t_(t) { canonicalize(); }

  static Pose3 identity() { return Pose3(); }
  static Pose3 from_xyz_yaw(double x, double y, double z, double yaw);

  const Eigen::Quaterniond& rotation() const { return q_; }
  const Vec3& translation() const { return t_; }
  Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }
  double yaw() const;

  Pose3 compose(const Pose3& other) const;
  Pose3 inverse() const;
  Vec3 transform_point(const Vec3& pt) const { return q_ * pt + t_; }

  Pose3 operator*(const Pose3& other) const { return compose(other); }

  bool is_finite() const { return q_.coeffs().allFinite() && t_.allFinite(); }

 private:
  void canonicalize();

  Eigen::Quaterniond q_;  // world-from-body, (w,x,y,z)
  Vec3 t_;
};

/// se(3) tangent layout: [translation (rho); rotation (phi)].
Pose3 se3_exp(const Vec6& xi);
Vec6 se3_log(const Pose3& p);          // throws RotationNearPi for |rot| near pi

/// Adjoint of T: T * Exp(xi) * T^-1 = Exp(Adj(T) * xi).
Mat6 se3_adjoint(const Pose3& p);

/// Inverse right Jacobian of SE(3) at xi: d Log(Exp(xi) Exp(dx)) / d dx.
Mat6 se3_right_jacobian_inv(const Vec6& xi);

// ---------------------------------------------------------------------------

/// Planar pose. Yaw invariantly normalized to (-pi, pi].
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double yaw_) : x(x_), y(y_), yaw(normalize_angle(yaw_)) {}

  Pose3 lift(double z = 0.0) const { return Pose3::from_xyz_yaw(x, y, z, yaw); }
  static Pose2 project(const Pose3& p) { return Pose2(p.translation().x(), p.translation().y(), p.yaw()); }
};

/// Body-frame velocity.
struct Twist {
  Vec3 linear = Vec3::Zero();    // m/s
  Vec3 angular = Vec3::Zero();   // rad/s
};

/// Symmetric PSD matrix container. Construction projects to the symmetric
/// part and validates eigenvalues >= -1e-9; EKF updates accumulate asymmetry
/// that the projection absorbs.
class Covariance {
 public:
  Covariance() = default;
  explicit Covariance(const Eigen::MatrixXd& m);

  const Eigen::MatrixXd& matrix() const { return m_; }
  int dim() const { return static_cast<int>(m_.rows()); }

  static constexpr double kPsdTolerance = 1e-9;
  static bool is_psd(const Eigen::MatrixXd& m, double tol = kPsdTolerance);

 private:
  Eigen::MatrixXd m_;
};

struct GridIndex {
  int i = 0;
  int j = 0;
  int k = 0;

  GridIndex() = default;
  GridIndex(int i_, int j_) : i(i_), j(j_), k(0) {}
  GridIndex(int i_, int j_, int k_) : i(i_), j(j_), k(k_) {}

  bool operator==(const GridIndex&) const = default;
};

}  // namespace voxnav
