#pragma once

// Independent consistency checks for generated episodes: every stored point
// must be reproducible from rigid-body poses, link poses must match a fresh
// forward-kinematics computation, and grasped-object points must match the
// body_point_world chain through the grasp link.

#include "trackctl/episode.hpp"
#include "trackctl/gantry.hpp"

namespace trackctl {

struct ConsistencyReport {
  double max_point_err = 0.0;
  double max_fk_err = 0.0;
  double max_grasp_err = 0.0;

  double worst() const { return std::max({max_point_err, max_fk_err, max_grasp_err}); }
};

inline ConsistencyReport verify_episode_consistency(const Episode& ep, const GantryRig* rig) {
  ConsistencyReport rep;
  rep.max_point_err = point_consistency_error(ep);

  for (const auto& f : ep.frames) {
    if (ep.regime == Regime::robot && rig != nullptr) {
      kin::JointConfig q = rig->config_from_state(f.state);
      for (int i = 1; i <= rig->model.n_dof(); ++i) {
        kin::RigidTransform fk = kin::link_pose(rig->model, q, i);
        const kin::RigidTransform& stored = f.body_poses[std::size_t(ep.body_id_of_link(i))];
        rep.max_fk_err = std::max(
            rep.max_fk_err, (fk.homogeneous() - stored.homogeneous()).cwiseAbs().maxCoeff());
      }
    } else if (ep.regime == Regime::human_proxy) {
      kin::RigidTransform hand;
      hand.R = kin::rot_from_euler_xyz(f.state.euler);
      hand.t = f.state.position;
      const kin::RigidTransform& stored = f.body_poses[std::size_t(ep.body_id_of_link(1))];
      rep.max_fk_err = std::max(
          rep.max_fk_err, (hand.homogeneous() - stored.homogeneous()).cwiseAbs().maxCoeff());
    }
  }

  for (const auto& gi : ep.grasps) {
    int body = ep.body_id_of_object(gi.object_index);
    for (int j = 0; j < ep.n_points(); ++j) {
      const Attachment& at = ep.attachments[std::size_t(j)];
      if (at.body_id != body) continue;
      Vector3d p_in_gripper = kin::apply(gi.rel, at.body_point);
      for (int t = gi.start_frame; t < gi.end_frame; ++t) {
        const Frame& f = ep.frames[std::size_t(t)];
        Vector3d world;
        if (ep.regime == Regime::robot && rig != nullptr) {
          kin::JointConfig q = rig->config_from_state(f.state);
          world = kin::body_point_world(rig->model, q,
                                        {rig->model.n_dof(), p_in_gripper});
        } else {
          kin::RigidTransform hand;
          hand.R = kin::rot_from_euler_xyz(f.state.euler);
          hand.t = f.state.position;
          world = kin::apply(hand, p_in_gripper);
        }
        Vector3d expect = kin::apply(f.camera_pose[0], world);
        rep.max_grasp_err = std::max(
            rep.max_grasp_err, (expect - f.points.coords.row(j).transpose()).norm());
      }
    }
  }
  return rep;
}

}  // namespace trackctl
