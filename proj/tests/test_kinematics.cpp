#include <doctest.h>

#include "trackctl/kinematics.hpp"

#include <cmath>

using namespace trackctl;
using namespace trackctl::kin;

namespace {

// Independent oracle: 30-term truncated series of the 4x4 matrix exponential.
Eigen::Matrix4d expm_series(const Twist& xi, double theta) {
  Eigen::Matrix4d A = Eigen::Matrix4d::Zero();
  A.topLeftCorner<3, 3>() = skew(xi.w);
  A.topRightCorner<3, 1>() = xi.v;
  A *= theta;
  Eigen::Matrix4d sum = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d term = Eigen::Matrix4d::Identity();
  for (int k = 1; k <= 30; ++k) {
    term = term * A / double(k);
    sum += term;
  }
  return sum;
}

double max_abs_diff(const Eigen::Matrix4d& a, const Eigen::Matrix4d& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

Twist random_unit_twist(Rng& rng, bool revolute) {
  Twist xi;
  Vector3d w(rng.normal(), rng.normal(), rng.normal());
  Vector3d v(rng.normal(), rng.normal(), rng.normal());
  if (revolute) {
    xi.w = w.normalized();
    xi.v = v;
  } else {
    xi.v = v.normalized();
  }
  return xi;
}

RigidTransform random_transform(Rng& rng) {
  Twist xi = random_unit_twist(rng, true);
  RigidTransform g = exp_twist(xi, rng.uniform(-3.0, 3.0));
  g.t += Vector3d(rng.normal(), rng.normal(), rng.normal());
  return g;
}

// Elementary homogeneous matrices, written out directly so the chain oracle
// shares no code with exp_twist/compose.
Eigen::Matrix4d h_rot_z(double a) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 0) = std::cos(a);
  m(0, 1) = -std::sin(a);
  m(1, 0) = std::sin(a);
  m(1, 1) = std::cos(a);
  return m;
}
Eigen::Matrix4d h_rot_y(double a) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 0) = std::cos(a);
  m(0, 2) = std::sin(a);
  m(2, 0) = -std::sin(a);
  m(2, 2) = std::cos(a);
  return m;
}
Eigen::Matrix4d h_trans(double x, double y, double z) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 3) = x;
  m(1, 3) = y;
  m(2, 3) = z;
  return m;
}

constexpr double kL0 = 0.30, kL1 = 0.25, kL2 = 0.20;

// 3-DoF elbow arm: base yaw, shoulder pitch, elbow pitch.
ManipulatorModel elbow_arm() {
  ManipulatorModel m;
  m.joints = {Twist::revolute_about({0, 0, 1}, {0, 0, 0}),
              Twist::revolute_about({0, 1, 0}, {0, 0, kL0}),
              Twist::revolute_about({0, 1, 0}, {kL1, 0, kL0})};
  m.joint_types = {JointType::revolute, JointType::revolute, JointType::revolute};
  m.joint_limits = {{{-3.0, 3.0}}, {{-3.0, 3.0}}, {{-3.0, 3.0}}};
  m.links.resize(3);
  m.links[0].ref_pose = RigidTransform::translation({0, 0, kL0});
  m.links[0].points = {{0.0, 0.0, -0.1}, {0.05, 0.0, 0.0}};
  m.links[1].ref_pose = RigidTransform::translation({kL1, 0, kL0});
  m.links[1].points = {{-0.1, 0.0, 0.0}, {0.0, 0.02, 0.0}};
  m.links[2].ref_pose = RigidTransform::translation({kL1 + kL2, 0, kL0});
  m.links[2].points = {{0.0, 0.0, 0.0}, {-0.05, 0.01, 0.0}};
  m.ee_frame = m.links[2].ref_pose;
  m.validate();
  return m;
}

// Independent moving-frame chain for the same arm.
Eigen::Matrix4d elbow_chain_link(const Eigen::VectorXd& th, int i) {
  Eigen::Matrix4d g = h_rot_z(th[0]) * h_trans(0, 0, kL0);
  if (i == 1) return g;
  g = g * h_rot_y(th[1]) * h_trans(kL1, 0, 0);
  if (i == 2) return g;
  return g * h_rot_y(th[2]) * h_trans(kL2, 0, 0);
}

}  // namespace

TEST_CASE("exp_twist basics") {
  Twist rz;
  rz.w = {0, 0, 1};

  RigidTransform g0 = exp_twist(rz, 0.0);
  CHECK((g0.R - Matrix3d::Identity()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g0.t.norm() == 0.0);

  RigidTransform gq = exp_twist(rz, M_PI / 2);
  Vector3d p = apply(gq, {1, 0, 0});
  CHECK((p - Vector3d(0, 1, 0)).norm() < 1e-12);

  Twist screw;
  screw.v = {1, 0, 0};
  screw.w = {0, 0, 1};
  RigidTransform g = exp_twist(screw, 0.7);
  CHECK(max_abs_diff(g.homogeneous(), expm_series(screw, 0.7)) < 1e-12);
}

TEST_CASE("exp_twist matches series oracle on random twists") {
  Rng rng(41);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    Twist xi = random_unit_twist(rng, k % 3 != 0);
    double theta = rng.uniform(-3.0, 3.0);
    RigidTransform g = exp_twist(xi, theta);
    worst = std::max(worst, max_abs_diff(g.homogeneous(), expm_series(xi, theta)));
    CHECK(g.valid(1e-9));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("exp_twist one-parameter subgroup") {
  Rng rng(42);
  for (int k = 0; k < 200; ++k) {
    Twist xi = random_unit_twist(rng, k % 2 == 0);
    double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
    RigidTransform lhs = compose(exp_twist(xi, a), exp_twist(xi, b));
    RigidTransform rhs = exp_twist(xi, a + b);
    CHECK(max_abs_diff(lhs.homogeneous(), rhs.homogeneous()) < 1e-10);
  }
}

TEST_CASE("compose laws and homogeneous oracle") {
  Rng rng(43);
  RigidTransform t = random_transform(rng);
  CHECK(max_abs_diff(compose(t, RigidTransform::identity()).homogeneous(), t.homogeneous()) ==
        0.0);
  CHECK(max_abs_diff(compose(t, t.inverse()).homogeneous(), Eigen::Matrix4d::Identity()) < 1e-12);

  for (int k = 0; k < 200; ++k) {
    RigidTransform a = random_transform(rng), b = random_transform(rng);
    CHECK(max_abs_diff(compose(a, b).homogeneous(), a.homogeneous() * b.homogeneous()) < 1e-12);
  }
}

TEST_CASE("apply basics and oracle") {
  CHECK((apply(RigidTransform::identity(), {1, 2, 3}) - Vector3d(1, 2, 3)).norm() == 0.0);
  CHECK((apply(RigidTransform::translation({0, 0, 5}), Vector3d::Zero()) - Vector3d(0, 0, 5))
            .norm() == 0.0);
  Rng rng(44);
  for (int k = 0; k < 100; ++k) {
    RigidTransform g = random_transform(rng);
    Vector3d p(rng.normal(), rng.normal(), rng.normal());
    Eigen::Vector4d ph(p.x(), p.y(), p.z(), 1.0);
    Eigen::Vector4d qh = g.homogeneous() * ph;
    CHECK((apply(g, p) - qh.head<3>()).norm() < 1e-13);
  }
}

TEST_CASE("link_pose trivial cases") {
  ManipulatorModel m = elbow_arm();
  JointConfig q;
  q.theta = Eigen::VectorXd::Zero(3);
  for (int i = 1; i <= 3; ++i) {
    RigidTransform g = link_pose(m, q, i);
    CHECK(max_abs_diff(g.homogeneous(), m.links[i - 1].ref_pose.homogeneous()) < 1e-15);
  }

  // 1-link planar arm, revolute about z at the origin: (L,0,0) -> (0,L,0).
  ManipulatorModel planar;
  planar.joints = {Twist::revolute_about({0, 0, 1}, {0, 0, 0})};
  planar.joint_types = {JointType::revolute};
  planar.joint_limits = {{{-M_PI, M_PI}}};
  planar.links.resize(1);
  planar.links[0].ref_pose = RigidTransform::identity();
  planar.validate();
  JointConfig q1;
  q1.theta = Eigen::VectorXd::Constant(1, M_PI / 2);
  const double L = 0.37;
  Vector3d p = body_point_world(planar, q1, {1, {L, 0, 0}});
  CHECK((p - Vector3d(0, L, 0)).norm() < 1e-12);
}

TEST_CASE("link_pose matches homogeneous-chain oracle") {
  ManipulatorModel m = elbow_arm();
  Rng rng(45);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    JointConfig q;
    q.theta = Eigen::VectorXd(3);
    for (int j = 0; j < 3; ++j) q.theta[j] = rng.uniform(-2.9, 2.9);
    for (int i = 1; i <= 3; ++i) {
      RigidTransform g = link_pose(m, q, i);
      worst = std::max(worst, max_abs_diff(g.homogeneous(), elbow_chain_link(q.theta, i)));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("body_point_world rigid linearity") {
  ManipulatorModel m = elbow_arm();
  Rng rng(46);
  for (int k = 0; k < 1000; ++k) {
    JointConfig q;
    q.theta = Eigen::VectorXd(3);
    for (int j = 0; j < 3; ++j) q.theta[j] = rng.uniform(-2.9, 2.9);
    int link = int(rng.uniform_int(1, 3));
    Vector3d p(rng.normal(), rng.normal(), rng.normal());
    Vector3d p2(rng.normal(), rng.normal(), rng.normal());
    double a = rng.uniform(-1.0, 2.0), b = 1.0 - a;
    Vector3d lhs = body_point_world(m, q, {link, (a * p + b * p2).eval()});
    Vector3d rhs =
        a * body_point_world(m, q, {link, p}) + b * body_point_world(m, q, {link, p2});
    CHECK((lhs - rhs).norm() < 1e-10);
  }
}

TEST_CASE("link_pose errors") {
  ManipulatorModel m = elbow_arm();
  JointConfig q;
  q.theta = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(link_pose(m, q, 0), std::out_of_range);
  CHECK_THROWS_AS(link_pose(m, q, 4), std::out_of_range);
  q.theta[1] = 10.0;
  CHECK_THROWS_AS(link_pose(m, q, 1), std::invalid_argument);
  JointConfig bad;
  bad.theta = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(link_pose(m, bad, 1), std::invalid_argument);
}

TEST_CASE("twist invariants") {
  Twist t;
  t.w = {0, 0, 2};
  CHECK_THROWS_AS(t.validate(JointType::revolute), std::invalid_argument);
  t.w = {0, 0, 1};
  CHECK_NOTHROW(t.validate(JointType::revolute));
  CHECK_THROWS_AS(t.validate(JointType::prismatic), std::invalid_argument);
  Twist p = Twist::prismatic_along({1, 1, 0});
  CHECK_NOTHROW(p.validate(JointType::prismatic));
}
