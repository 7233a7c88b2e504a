#pragma once

// Episode data model: per-frame depth rasters, tracked 3D points with fixed
// rigid-body attachments, proprioceptive states, and the simulator ground
// truth (camera/body poses, grasp intervals) that makes episodes verifiable.

#include "trackctl/kinematics.hpp"
#include "trackctl/scene.hpp"

#include <string>
#include <vector>

namespace trackctl {

enum class AttachKind : std::uint8_t { background = 0, table = 1, object = 2, link = 3 };

struct Attachment {
  AttachKind kind = AttachKind::background;
  int index = 0;       // object k (0-based) or link i (1-based); 0 otherwise
  int body_id = 0;     // index into Frame::body_poses (0 = world)
  Vector3d body_point = Vector3d::Zero();

  std::string label() const {
    switch (kind) {
      case AttachKind::background: return "background";
      case AttachKind::table: return "table";
      case AttachKind::object: return "object-" + std::to_string(index);
      default: return "link-" + std::to_string(index);
    }
  }
};

struct PointSet {
  Eigen::MatrixX3d coords;  // n x 3, camera frame, meters
};

struct Frame {
  std::vector<std::vector<float>> depth;        // per view, height*width, 0 = no hit
  PointSet points;
  ProprioState state;
  int time_index = 0;
  std::vector<kin::RigidTransform> camera_pose;  // per view, world -> camera
  std::vector<kin::RigidTransform> body_poses;   // per body, body -> world (0 = world)
};

struct GraspInterval {
  int object_index = 0;      // into the scene object list
  int start_frame = 0;       // inclusive
  int end_frame = 0;         // exclusive
  kin::RigidTransform rel;   // object pose in the effector (grasp-link) frame
};

struct Episode {
  std::string instruction;
  Regime regime = Regime::robot;
  TaskKind task_kind = TaskKind::pick;
  std::uint64_t seed = 0;
  double fps = 10.0;
  int grid_size = 16;
  int views = 1;
  int raster_width = 32, raster_height = 32;
  int n_objects = 0;
  int n_links = 0;  // robot: arm links; human proxy: 1 (the floating effector)

  std::vector<Attachment> attachments;  // constant over the episode
  std::vector<Frame> frames;
  std::vector<GraspInterval> grasps;

  int length() const { return int(frames.size()); }
  int n_points() const { return grid_size * grid_size; }
  int n_bodies() const { return 1 + n_objects + n_links; }
  int body_id_of_object(int k) const { return 1 + k; }
  int body_id_of_link(int i) const { return 1 + n_objects + (i - 1); }

  void validate() const {
    if (length() < 2 || length() > 256)
      throw std::invalid_argument("episode length must be in [2, 256]");
    if (int(attachments.size()) != n_points())
      throw std::invalid_argument("attachment count must equal g*g");
    for (const auto& f : frames) {
      if (int(f.depth.size()) != views || int(f.camera_pose.size()) != views)
        throw std::invalid_argument("frame view count mismatch");
      if (f.points.coords.rows() != n_points())
        throw std::invalid_argument("frame point count mismatch");
      if (int(f.body_poses.size()) != n_bodies())
        throw std::invalid_argument("frame body pose count mismatch");
    }
  }
};

// Max deviation of every stored point from the rigid-body identity
// p_t = camera_pose_t . body_pose_t (p_body), over all frames and points.
// View 0 hosts the tracked grid.
inline double point_consistency_error(const Episode& ep) {
  double worst = 0.0;
  for (const auto& f : ep.frames) {
    for (int j = 0; j < ep.n_points(); ++j) {
      const Attachment& at = ep.attachments[std::size_t(j)];
      Vector3d world = kin::apply(f.body_poses[std::size_t(at.body_id)], at.body_point);
      Vector3d expect = kin::apply(f.camera_pose[0], world);
      worst = std::max(worst, (expect - f.points.coords.row(j).transpose()).norm());
    }
  }
  return worst;
}

}  // namespace trackctl
