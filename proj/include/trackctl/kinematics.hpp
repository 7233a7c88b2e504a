#pragma once

// SE(3) twist algebra and product-of-exponentials forward kinematics.
// Everything here is double precision: this module is the ground-truth
// oracle for the generated point tracks.

#include "trackctl/common.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace trackctl::kin {

inline Matrix3d skew(const Vector3d& w) {
  Matrix3d m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

enum class JointType { revolute, prismatic };

struct Twist {
  Vector3d v = Vector3d::Zero();  // m
  Vector3d w = Vector3d::Zero();  // rad

  static Twist revolute_about(const Vector3d& axis, const Vector3d& point) {
    Twist xi;
    xi.w = axis.normalized();
    xi.v = -xi.w.cross(point);
    return xi;
  }
  static Twist prismatic_along(const Vector3d& dir) {
    Twist xi;
    xi.v = dir.normalized();
    return xi;
  }

  void validate(JointType type) const {
    if (type == JointType::revolute) {
      if (std::abs(w.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("revolute twist requires |w| = 1");
    } else {
      if (w.norm() > 1e-12) throw std::invalid_argument("prismatic twist requires w = 0");
      if (std::abs(v.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("prismatic twist requires |v| = 1");
    }
  }
};

struct RigidTransform {
  Matrix3d R = Matrix3d::Identity();
  Vector3d t = Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform translation(const Vector3d& t) {
    RigidTransform g;
    g.t = t;
    return g;
  }

  RigidTransform inverse() const {
    RigidTransform g;
    g.R = R.transpose();
    g.t = -(g.R * t);
    return g;
  }

  double orthonormality_error() const {
    return (R.transpose() * R - Matrix3d::Identity()).cwiseAbs().maxCoeff();
  }
  bool valid(double tol = 1e-9) const {
    return orthonormality_error() <= tol && std::abs(R.determinant() - 1.0) <= tol;
  }
  // Gram-Schmidt repair for drift accumulated over long compose chains.
  void renormalize() {
    Vector3d c0 = R.col(0).normalized();
    Vector3d c1 = (R.col(1) - c0.dot(R.col(1)) * c0).normalized();
    R.col(0) = c0;
    R.col(1) = c1;
    R.col(2) = c0.cross(c1);
  }

  Eigen::Matrix4d homogeneous() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = t;
    return m;
  }
};

// Closed-form screw-motion exponential (Rodrigues rotation plus the
// standard translation term). Total on valid twists.
inline RigidTransform exp_twist(const Twist& xi, double theta) {
  RigidTransform g;
  const double wn = xi.w.norm();
  if (std::abs(theta) * wn < 1e-12) {  // pure-translation branch
    g.t = xi.v * theta;
    return g;
  }
  const Vector3d wh = xi.w / wn;
  const Vector3d vh = xi.v / wn;
  const double th = theta * wn;
  const Matrix3d W = skew(wh);
  g.R = Matrix3d::Identity() + std::sin(th) * W + (1.0 - std::cos(th)) * (W * W);
  g.t = (Matrix3d::Identity() - g.R) * wh.cross(vh) + wh * (wh.dot(vh)) * th;
  return g;
}

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform g;
  g.R = a.R * b.R;
  g.t = a.R * b.t + a.t;
  if (g.orthonormality_error() > 1e-9) g.renormalize();
  return g;
}

inline Vector3d apply(const RigidTransform& g, const Vector3d& p) { return g.R * p + g.t; }

struct LinkGeometry {
  std::vector<Vector3d> points;  // body-frame tracked points
  RigidTransform ref_pose;       // link frame at the reference configuration
};

struct ManipulatorModel {
  std::vector<Twist> joints;  // base frame, reference configuration
  std::vector<JointType> joint_types;
  std::vector<std::array<double, 2>> joint_limits;  // rad or m
  std::vector<LinkGeometry> links;                  // one per joint
  RigidTransform ee_frame;

  int n_dof() const { return int(joints.size()); }

  void validate() const {
    if (joints.empty()) throw std::invalid_argument("manipulator needs at least one joint");
    if (joint_types.size() != joints.size() || joint_limits.size() != joints.size() ||
        links.size() != joints.size())
      throw std::invalid_argument("manipulator field lengths disagree");
    for (std::size_t i = 0; i < joints.size(); ++i) {
      joints[i].validate(joint_types[i]);
      if (joint_limits[i][0] > joint_limits[i][1])
        throw std::invalid_argument("joint limit min > max");
      if (!links[i].ref_pose.valid())
        throw std::invalid_argument("link reference pose is not a valid rigid transform");
    }
    if (!ee_frame.valid()) throw std::invalid_argument("ee_frame is not a valid rigid transform");
  }
};

struct JointConfig {
  Eigen::VectorXd theta;

  bool within_limits(const ManipulatorModel& m, double tol = 1e-9) const {
    if (theta.size() != m.n_dof()) return false;
    for (int j = 0; j < m.n_dof(); ++j)
      if (theta[j] < m.joint_limits[j][0] - tol || theta[j] > m.joint_limits[j][1] + tol)
        return false;
    return true;
  }
};

namespace detail {
inline void check_config(const ManipulatorModel& m, const JointConfig& q) {
  if (q.theta.size() != m.n_dof()) throw std::invalid_argument("joint config size mismatch");
  if (!q.within_limits(m)) throw std::invalid_argument("joint config outside limits");
}
}  // namespace detail

// Pose of link i (1-based) in the base frame: the product of the first i
// joint exponentials composed with the link's reference pose.
inline RigidTransform link_pose(const ManipulatorModel& m, const JointConfig& q, int i) {
  detail::check_config(m, q);
  if (i < 1 || i > m.n_dof()) throw std::out_of_range("link index out of range");
  RigidTransform g;
  for (int j = 0; j < i; ++j) g = compose(g, exp_twist(m.joints[j], q.theta[j]));
  return compose(g, m.links[i - 1].ref_pose);
}

inline RigidTransform ee_pose(const ManipulatorModel& m, const JointConfig& q) {
  detail::check_config(m, q);
  RigidTransform g;
  for (int j = 0; j < m.n_dof(); ++j) g = compose(g, exp_twist(m.joints[j], q.theta[j]));
  return compose(g, m.ee_frame);
}

struct BodyAttachment {
  int link_index = 1;  // 1-based
  Vector3d body_point = Vector3d::Zero();
};

inline Vector3d body_point_world(const ManipulatorModel& m, const JointConfig& q,
                                 const BodyAttachment& at) {
  return apply(link_pose(m, q, at.link_index), at.body_point);
}

// ---- rotation parametrization helpers --------------------------------------

inline double wrap_angle(double a) {  // to [-pi, pi)
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI;
}

// Intrinsic XYZ convention: R = Rx(ax) * Ry(ay) * Rz(az).
inline Matrix3d rot_from_euler_xyz(const Vector3d& e) {
  return (Eigen::AngleAxisd(e.x(), Vector3d::UnitX()) *
          Eigen::AngleAxisd(e.y(), Vector3d::UnitY()) *
          Eigen::AngleAxisd(e.z(), Vector3d::UnitZ()))
      .toRotationMatrix();
}

inline Vector3d euler_xyz_from_rot(const Matrix3d& R) {
  double ay = std::asin(std::clamp(R(0, 2), -1.0, 1.0));
  double ax, az;
  if (std::abs(R(0, 2)) < 1.0 - 1e-12) {
    ax = std::atan2(-R(1, 2), R(2, 2));
    az = std::atan2(-R(0, 1), R(0, 0));
  } else {  // gimbal: fold everything into ax
    ax = std::atan2(R(2, 1), R(1, 1));
    az = 0.0;
  }
  return {wrap_angle(ax), wrap_angle(ay), wrap_angle(az)};
}

}  // namespace trackctl::kin
