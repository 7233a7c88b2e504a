#pragma once

// Default manipulator: a 4-DoF gantry (prismatic x, y, z plus a revolute
// yaw about the vertical effector axis). Effector pose and joint space
// coincide by construction, so scripted Cartesian demos need no IK.

#include "trackctl/kinematics.hpp"
#include "trackctl/scene.hpp"

namespace trackctl {

struct GantryRig {
  kin::ManipulatorModel model;
  ArmVisual visual;
  double bridge_z = 0.55;
  double ee_rest_z = 0.25;

  kin::JointConfig config_for(const Vector3d& pos, double yaw) const {
    kin::JointConfig q;
    q.theta = Eigen::VectorXd(4);
    q.theta << pos.x(), pos.y(), pos.z() - ee_rest_z, kin::wrap_angle(yaw);
    return q;
  }
  bool reachable(const Vector3d& pos, double yaw) const {
    return config_for(pos, yaw).within_limits(model);
  }
  ProprioState state_for(const kin::JointConfig& q, bool gripper_closed) const {
    ProprioState s;
    s.position = {q.theta[0], q.theta[1], q.theta[2] + ee_rest_z};
    s.euler = {0, 0, kin::wrap_angle(q.theta[3])};
    s.gripper = gripper_closed ? 1.0 : 0.0;
    return s;
  }
  kin::JointConfig config_from_state(const ProprioState& s) const {
    return config_for(s.position, s.euler.z());
  }
};

inline GantryRig make_gantry_rig(const WorkspaceBounds& ws) {
  GantryRig rig;
  const double H = rig.bridge_z;
  const double E = rig.ee_rest_z;
  kin::ManipulatorModel& m = rig.model;
  m.joints = {kin::Twist::prismatic_along({1, 0, 0}), kin::Twist::prismatic_along({0, 1, 0}),
              kin::Twist::prismatic_along({0, 0, 1}),
              kin::Twist::revolute_about({0, 0, 1}, {0, 0, 0})};
  m.joint_types = {kin::JointType::prismatic, kin::JointType::prismatic,
                   kin::JointType::prismatic, kin::JointType::revolute};
  m.joint_limits = {{{ws.lo.x() - 0.05, ws.hi.x() + 0.05}},
                    {{ws.lo.y() - 0.05, ws.hi.y() + 0.05}},
                    {{ws.lo.z() + 0.01 - E, ws.hi.z() - E}},
                    {{-M_PI, M_PI}}};
  m.links.resize(4);
  // bridge beam sliding along x
  m.links[0].ref_pose = kin::RigidTransform::translation({0, 0, H});
  m.links[0].points = {{0.0, 0.30, 0.025}, {0.0, -0.30, 0.025}};
  // carriage riding the bridge along y
  m.links[1].ref_pose = kin::RigidTransform::translation({0, 0, H});
  m.links[1].points = {{0.03, 0.0, 0.0}, {0.0, 0.03, 0.03}};
  // vertical rod carrying the effector
  m.links[2].ref_pose = kin::RigidTransform::translation({0, 0, H});
  m.links[2].points = {{0.0, 0.0, -0.20}, {0.012, 0.0, -0.10}};
  // gripper body; frame origin is the grasp point between the fingers
  m.links[3].ref_pose = kin::RigidTransform::translation({0, 0, E});
  m.links[3].points = {{0.0, 0.0, 0.06}, {0.03, 0.0, 0.06}};
  m.ee_frame = m.links[3].ref_pose;
  m.validate();

  const double span_y = ws.hi.y() - ws.lo.y();
  rig.visual.link_boxes.resize(4);
  rig.visual.link_boxes[0] = {{{0.022, span_y / 2 + 0.12, 0.022}, kin::RigidTransform()}};
  rig.visual.link_boxes[1] = {{{0.035, 0.035, 0.030}, kin::RigidTransform::translation({0, 0, -0.045})}};
  rig.visual.link_boxes[2] = {{{0.013, 0.013, 0.105}, kin::RigidTransform::translation({0, 0, -0.155})}};
  rig.visual.link_boxes[3] = {};  // rendered as the shared gripper assembly
  return rig;
}

// Static rails the bridge rides on; world-frame background geometry.
inline std::vector<BoxGeom> gantry_decor(const WorkspaceBounds& ws, double bridge_z) {
  const double ry = ws.hi.y() + 0.14;
  const double rx = (ws.hi.x() - ws.lo.x()) / 2 + 0.10;
  std::vector<BoxGeom> decor;
  decor.push_back({{rx, 0.02, 0.018}, kin::RigidTransform::translation({0, ry, bridge_z})});
  decor.push_back({{rx, 0.02, 0.018}, kin::RigidTransform::translation({0, -ry, bridge_z})});
  decor.push_back({{0.03, 0.03, bridge_z / 2}, kin::RigidTransform::translation({ws.lo.x() - 0.08, ry, bridge_z / 2})});
  decor.push_back({{0.03, 0.03, bridge_z / 2}, kin::RigidTransform::translation({ws.lo.x() - 0.08, -ry, bridge_z / 2})});
  decor.push_back({{0.03, 0.03, bridge_z / 2}, kin::RigidTransform::translation({ws.hi.x() + 0.08, ry, bridge_z / 2})});
  decor.push_back({{0.03, 0.03, bridge_z / 2}, kin::RigidTransform::translation({ws.hi.x() + 0.08, -ry, bridge_z / 2})});
  return decor;
}

}  // namespace trackctl
