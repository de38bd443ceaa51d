#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <random>

#include "doctest.h"
#include "voxnav/geometry.hpp"

using namespace voxnav;

namespace {

// independent oracle: dense 4x4 matrix exponential by power series
Eigen::Matrix4d se3_hat(const Vec6& xi) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.tail<3>());
  m.topRightCorner<3, 1>() = xi.head<3>();
  return m;
}

Eigen::Matrix4d matrix_exp_series(const Eigen::Matrix4d& a) {
  Eigen::Matrix4d sum = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d term = Eigen::Matrix4d::Identity();
  for (int k = 1; k < 40; ++k) {
    term = (term * a / static_cast<double>(k)).eval();
    sum += term;
  }
  return sum;
}

Eigen::Matrix4d as_matrix(const Pose3& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = p.rotation_matrix();
  m.topRightCorner<3, 1>() = p.translation();
  return m;
}

std::mt19937_64 rng(42);

Vec6 random_tangent(double rot_max) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec6 xi;
  for (int i = 0; i < 6; ++i) xi[i] = u(rng);
  xi.head<3>() *= 2.0;
  Vec3 phi = xi.tail<3>();
  if (phi.norm() > 1e-12) phi = phi.normalized() * rot_max * std::abs(u(rng));
  xi.tail<3>() = phi;
  return xi;
}

}  // namespace

TEST_CASE("compose identity and inverse laws") {
  const Pose3 p = se3_exp((Vec6() << 0.3, -0.2, 0.5, 0.1, 0.2, -0.4).finished());
  const Pose3 id;

  auto near_identity = [](const Pose3& q, double tol) {
    return q.translation().norm() < tol && std::abs(q.rotation().w() - 1.0) < tol;
  };

  CHECK((id.compose(p).translation() - p.translation()).norm() < 1e-15);
  CHECK(near_identity(p.compose(p.inverse()), 1e-12));

  // two 90 degree yaws make a 180 degree yaw
  const Pose3 yaw90 = Pose3::from_xyz_yaw(0, 0, 0, M_PI / 2);
  const Pose3 yaw180 = yaw90.compose(yaw90);
  CHECK(yaw180.yaw() == doctest::Approx(M_PI).epsilon(1e-12));
}

TEST_CASE("se3 exp matches the matrix power series oracle") {
  CHECK(se3_exp(Vec6::Zero()).translation().norm() == 0.0);

  const Pose3 yawp = se3_exp((Vec6() << 0, 0, 0, 0, 0, M_PI / 2).finished());
  CHECK(yawp.yaw() == doctest::Approx(M_PI / 2));
  CHECK(yawp.translation().norm() < 1e-15);

  for (int trial = 0; trial < 500; ++trial) {
    const Vec6 xi = random_tangent(3.0);
    const Eigen::Matrix4d oracle = matrix_exp_series(se3_hat(xi));
    const Eigen::Matrix4d impl = as_matrix(se3_exp(xi));
    CHECK((oracle - impl).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("se3 log inverts exp away from the cut locus") {
  for (int trial = 0; trial < 500; ++trial) {
    const Vec6 xi = random_tangent(3.0);
    const Vec6 back = se3_log(se3_exp(xi));
    CHECK((xi - back).cwiseAbs().maxCoeff() < 1e-9);
  }

  // round trip through the pose itself
  for (int trial = 0; trial < 200; ++trial) {
    const Pose3 p = se3_exp(random_tangent(2.5));
    const Pose3 q = se3_exp(se3_log(p));
    CHECK((as_matrix(p) - as_matrix(q)).cwiseAbs().maxCoeff() < 1e-9);
  }

  CHECK_THROWS_AS(se3_log(se3_exp((Vec6() << 0, 0, 0, 0, 0, M_PI - 1e-9).finished())),
                  RotationNearPi);
}

TEST_CASE("transform_point basics and homomorphism") {
  CHECK((Pose3().transform_point(Vec3(1, 2, 3)) - Vec3(1, 2, 3)).norm() == 0.0);

  const Pose3 trans(Eigen::Quaterniond::Identity(), Vec3(1, 2, 3));
  CHECK((trans.transform_point(Vec3::Zero()) - Vec3(1, 2, 3)).norm() == 0.0);

  const Pose3 yaw90 = Pose3::from_xyz_yaw(0, 0, 0, M_PI / 2);
  CHECK((yaw90.transform_point(Vec3(1, 0, 0)) - Vec3(0, 1, 0)).norm() < 1e-12);

  for (int trial = 0; trial < 200; ++trial) {
    const Pose3 a = se3_exp(random_tangent(2.0));
    const Pose3 b = se3_exp(random_tangent(2.0));
    const Vec3 x(0.5, -1.0, 2.0);
    const Vec3 lhs = a.compose(b).transform_point(x);
    const Vec3 rhs = a.transform_point(b.transform_point(x));
    CHECK((lhs - rhs).norm() < 1e-10);
  }
}

TEST_CASE("quaternion norm survives a million composes") {
  Pose3 p;
  const Pose3 step = se3_exp((Vec6() << 1e-3, 0, 0, 1e-3, 2e-3, -1e-3).finished());
  for (int i = 0; i < 1000000; ++i) p = p.compose(step);
  CHECK(std::abs(p.rotation().norm() - 1.0) < 1e-6);
  CHECK(p.rotation().w() >= 0.0);  // canonical sign
}

TEST_CASE("se3 adjoint and right jacobian inverse match finite differences") {
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec6 xi = random_tangent(2.0);
    const Pose3 T = se3_exp(xi);

    // adjoint: T Exp(d) T^-1 == Exp(Adj(T) d)
    const Mat6 adj = se3_adjoint(T);
    for (int col = 0; col < 6; ++col) {
      Vec6 d = Vec6::Zero();
      d[col] = h;
      const Vec6 lhs = se3_log(T.compose(se3_exp(d)).compose(T.inverse()));
      CHECK((lhs / h - adj.col(col)).cwiseAbs().maxCoeff() < 1e-5);
    }

    // d Log(Exp(xi) Exp(d)) / dd == Jr_inv(xi)
    const Mat6 jr_inv = se3_right_jacobian_inv(xi);
    for (int col = 0; col < 6; ++col) {
      Vec6 dp = Vec6::Zero(), dm = Vec6::Zero();
      dp[col] = h;
      dm[col] = -h;
      const Vec6 fp = se3_log(se3_exp(xi).compose(se3_exp(dp)));
      const Vec6 fm = se3_log(se3_exp(xi).compose(se3_exp(dm)));
      CHECK(((fp - fm) / (2 * h) - jr_inv.col(col)).cwiseAbs().maxCoeff() < 1e-5);
    }
  }
}

TEST_CASE("yaw normalization is half-open at -pi") {
  CHECK(normalize_angle(M_PI) == doctest::Approx(M_PI));
  CHECK(normalize_angle(-M_PI) == doctest::Approx(M_PI));
  CHECK(normalize_angle(3 * M_PI / 2) == doctest::Approx(-M_PI / 2));
  CHECK(Pose2(0, 0, 5.0).yaw == doctest::Approx(5.0 - 2 * M_PI));
}

TEST_CASE("covariance symmetrizes and validates PSD") {
  Eigen::MatrixXd m(3, 3);
  m << 1.0, 0.1, 0.0,
       0.1 + 1e-12, 1.0, 0.0,
       0.0, 0.0, 1.0;
  const Covariance c(m);
  CHECK((c.matrix() - c.matrix().transpose()).cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd bad = -Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS(Covariance{bad});

  Eigen::MatrixXd nan = Eigen::MatrixXd::Identity(2, 2);
  nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Covariance{nan}, NonFiniteInput);
}
