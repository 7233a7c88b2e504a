#pragma once

// Kinematic scene simulator. Grasping is rigid attachment within a grasp
// radius while the gripper is closed; releases settle objects straight down
// onto their support. Every body pose is exact, which makes the generated
// point tracks verifiable against the kinematics module.

#include "trackctl/episode.hpp"
#include "trackctl/gantry.hpp"
#include "trackctl/render.hpp"
#include "trackctl/scene.hpp"
#include "trackctl/script.hpp"

#include <algorithm>
#include <optional>
#include <vector>

namespace trackctl {

constexpr double kGraspRadius = 0.03;  // m
constexpr int kSimRate = 50;           // internal stepping rate, Hz
constexpr int kMaxEpisodeFrames = 256;

struct SimObject {
  ObjectSpec spec;
  kin::RigidTransform pose;
  bool pressed = false;
};

class Simulator {
 public:
  Simulator(const SceneSpec& spec, const GantryRig* rig,
            std::vector<kin::RigidTransform> object_poses)
      : spec_(spec), rig_(rig) {
    spec_.validate();
    if (spec_.regime == Regime::robot && rig_ == nullptr)
      throw std::invalid_argument("robot regime requires a gantry rig");
    if (object_poses.size() != spec_.objects.size())
      throw std::invalid_argument("object pose count mismatch");
    for (std::size_t i = 0; i < spec_.objects.size(); ++i)
      objects_.push_back({spec_.objects[i], object_poses[i], false});
    n_links_ = spec_.regime == Regime::robot ? rig_->model.n_dof() : 1;
  }

  int n_links() const { return n_links_; }
  int gripper_link() const { return n_links_; }
  const SceneSpec& spec() const { return spec_; }
  const SimObject& object(int k) const { return objects_[std::size_t(k)]; }
  const std::vector<int>& press_sequence() const { return press_sequence_; }
  std::optional<int> grasped() const { return grasped_; }
  const kin::RigidTransform& grasp_rel() const { return rel_; }
  bool bounds_flagged() const { return bounds_flagged_; }
  const kin::RigidTransform& ee_pose() const { return ee_pose_; }
  bool gripper_closed() const { return gripper_closed_; }

  void set_effector(const Vector3d& pos_in, double yaw, bool closed) {
    Vector3d pos = spec_.workspace.clamp(pos_in);
    if ((pos - pos_in).norm() > 1e-12) bounds_flagged_ = true;
    yaw = kin::wrap_angle(yaw);
    ee_pose_.R = Eigen::AngleAxisd(yaw, Vector3d::UnitZ()).toRotationMatrix();
    ee_pose_.t = pos;
    yaw_ = yaw;

    if (grasped_) objects_[std::size_t(*grasped_)].pose = kin::compose(ee_pose_, rel_);

    if (closed && !gripper_closed_) try_grasp();
    if (!closed && gripper_closed_) release();
    gripper_closed_ = closed;
    if (gripper_closed_ && !grasped_) check_press();
  }

  ProprioState proprio() const {
    ProprioState s;
    s.position = ee_pose_.t;
    s.euler = {0, 0, yaw_};
    s.gripper = gripper_closed_ ? 1.0 : 0.0;
    return s;
  }

  kin::JointConfig arm_config() const { return rig_->config_for(ee_pose_.t, yaw_); }

  // [world, objects..., links...]; the gripper link pose equals ee_pose.
  std::vector<kin::RigidTransform> body_poses() const {
    std::vector<kin::RigidTransform> poses;
    poses.push_back(kin::RigidTransform::identity());
    for (const auto& o : objects_) poses.push_back(o.pose);
    if (spec_.regime == Regime::robot) {
      kin::JointConfig q = arm_config();
      for (int i = 1; i <= rig_->model.n_dof(); ++i)
        poses.push_back(kin::link_pose(rig_->model, q, i));
    } else {
      poses.push_back(ee_pose_);
    }
    return poses;
  }

  RenderScene render_scene() const {
    RenderScene rs;
    rs.table_height = spec_.table_height;
    rs.max_depth = spec_.max_depth;
    for (const auto& b : spec_.decor)
      rs.items.push_back({ShapeKind::box, b.half_extents, 0, b.pose, kIdDecor});
    for (std::size_t k = 0; k < objects_.size(); ++k) {
      const SimObject& o = objects_[k];
      RenderItem it{o.spec.kind, o.spec.half_extents, o.spec.radius, o.pose,
                    kIdObjectBase + std::int32_t(k)};
      if (o.spec.is_button && o.pressed) {  // visual press feedback
        it.half_extents.z() *= 0.55;
        it.pose.t.z() = spec_.table_height + it.half_extents.z();
      }
      rs.items.push_back(it);
    }
    if (spec_.regime == Regime::robot) {
      kin::JointConfig q = arm_config();
      for (int i = 1; i <= rig_->model.n_dof(); ++i) {
        if (std::size_t(i) > rig_->visual.link_boxes.size()) break;
        kin::RigidTransform lp = kin::link_pose(rig_->model, q, i);
        for (const auto& b : rig_->visual.link_boxes[std::size_t(i - 1)])
          rs.items.push_back({ShapeKind::box, b.half_extents, 0, kin::compose(lp, b.pose),
                              kIdLinkBase + std::int32_t(i)});
      }
    }
    append_gripper_items(rs);
    return rs;
  }

  DepthImage render(const CameraModel& cam) const { return render_depth(render_scene(), cam); }

  // Disturbance hook: lateral teleport of one object (drags along anything
  // stacked on top is out of scope; cubes are disturbed individually).
  void teleport_object(int k, const Vector3d& offset) {
    objects_[std::size_t(k)].pose.t += offset;
  }

 private:
  void append_gripper_items(RenderScene& rs) const {
    const GripperGeom& g = spec_.gripper;
    std::int32_t id = kIdLinkBase + gripper_link();
    double gap = gripper_closed_ ? g.closed_gap : g.open_gap;
    auto at = [&](const Vector3d& off) {
      kin::RigidTransform p = ee_pose_;
      p.t += ee_pose_.R * off;
      return p;
    };
    rs.items.push_back({ShapeKind::box, g.palm_half, 0, at({0, 0, g.palm_z}), id});
    rs.items.push_back({ShapeKind::box, g.finger_half, 0, at({gap / 2, 0, g.finger_z}), id});
    rs.items.push_back({ShapeKind::box, g.finger_half, 0, at({-gap / 2, 0, g.finger_z}), id});
    if (spec_.regime == Regime::human_proxy)  // stub wrist for the floating hand
      rs.items.push_back(
          {ShapeKind::box, {0.014, 0.014, 0.05}, 0, at({0, 0, g.palm_z + 0.066}), id});
  }

  void try_grasp() {
    double best = kGraspRadius;
    int best_k = -1;
    for (std::size_t k = 0; k < objects_.size(); ++k) {
      if (!objects_[k].spec.graspable()) continue;
      double d = (objects_[k].pose.t - ee_pose_.t).norm();
      if (d <= best) {
        best = d;
        best_k = int(k);
      }
    }
    if (best_k >= 0) {
      grasped_ = best_k;
      rel_ = kin::compose(ee_pose_.inverse(), objects_[std::size_t(best_k)].pose);
    }
  }

  void release() {
    if (!grasped_) return;
    SimObject& o = objects_[std::size_t(*grasped_)];
    double support = spec_.table_height;
    for (std::size_t k = 0; k < objects_.size(); ++k) {
      if (int(k) == *grasped_) continue;
      const SimObject& s = objects_[k];
      Vector3d d = o.pose.t - s.pose.t;
      double fx = s.spec.kind == ShapeKind::box ? s.spec.half_extents.x() : s.spec.radius * 0.7;
      double fy = s.spec.kind == ShapeKind::box ? s.spec.half_extents.y() : s.spec.radius * 0.7;
      double top = s.pose.t.z() + s.spec.top_offset();
      if (std::abs(d.x()) <= fx && std::abs(d.y()) <= fy && top <= o.pose.t.z() + 0.03)
        support = std::max(support, top);
    }
    o.pose.t.z() = support + o.spec.rest_half_height();
    grasped_.reset();
  }

  void check_press() {
    for (std::size_t k = 0; k < objects_.size(); ++k) {
      SimObject& o = objects_[k];
      if (!o.spec.is_button || o.pressed) continue;
      Vector3d d = ee_pose_.t - o.pose.t;
      double top = o.pose.t.z() + o.spec.half_extents.z();
      if (std::abs(d.x()) <= o.spec.half_extents.x() &&
          std::abs(d.y()) <= o.spec.half_extents.y() && ee_pose_.t.z() <= top + 0.0015) {
        o.pressed = true;
        press_sequence_.push_back(int(k));
      }
    }
  }

  SceneSpec spec_;
  const GantryRig* rig_;
  std::vector<SimObject> objects_;
  int n_links_ = 1;
  kin::RigidTransform ee_pose_;
  double yaw_ = 0.0;
  bool gripper_closed_ = false;
  std::optional<int> grasped_;
  kin::RigidTransform rel_;
  std::vector<int> press_sequence_;
  bool bounds_flagged_ = false;
};

// ---- per-episode object placement -------------------------------------------

inline std::vector<kin::RigidTransform> sample_placement(const SceneSpec& spec,
                                                         const TaskScript& task, Rng& rng) {
  const double margin = 0.07;
  const double min_dist = 0.13;
  std::vector<kin::RigidTransform> poses(spec.objects.size());
  std::vector<bool> placed(spec.objects.size(), false);

  int target = task.target_label.empty() ? -1 : spec.object_index(task.target_label);
  int second = task.second_label.empty() ? -1 : spec.object_index(task.second_label);

  auto place_on_table = [&](std::size_t k) {
    const ObjectSpec& o = spec.objects[k];
    for (int tries = 0; tries < 200; ++tries) {
      Vector3d p(rng.uniform(spec.workspace.lo.x() + margin, spec.workspace.hi.x() - margin),
                 rng.uniform(spec.workspace.lo.y() + margin, spec.workspace.hi.y() - margin),
                 spec.table_height + o.rest_half_height());
      bool ok = true;
      for (std::size_t j = 0; j < poses.size(); ++j)
        if (placed[j] && (poses[j].t.head<2>() - p.head<2>()).norm() < min_dist) ok = false;
      if (ok || tries == 199) {
        poses[k] = kin::RigidTransform::translation(p);
        placed[k] = true;
        return;
      }
    }
  };

  // destack starts from a stacked pair: base first, target on top of it
  if (task.kind == TaskKind::destack && target >= 0 && second >= 0) {
    place_on_table(std::size_t(second));
    Vector3d p = poses[std::size_t(second)].t;
    p.z() = poses[std::size_t(second)].t.z() + spec.objects[std::size_t(second)].top_offset() +
            spec.objects[std::size_t(target)].rest_half_height();
    poses[std::size_t(target)] = kin::RigidTransform::translation(p);
    placed[std::size_t(target)] = true;
  }
  for (std::size_t k = 0; k < spec.objects.size(); ++k)
    if (!placed[k]) place_on_table(k);
  return poses;
}

// ---- episode generation -------------------------------------------------

inline Attachment make_attachment(const Episode& ep, std::int32_t surface_id,
                                  const Vector3d& p_cam, const CameraModel& cam0,
                                  const std::vector<kin::RigidTransform>& body_poses) {
  Attachment at;
  Vector3d p_world = kin::apply(cam0.pose.inverse(), p_cam);
  if (surface_id == kIdNone || surface_id == kIdDecor) {
    at.kind = AttachKind::background;
    at.body_id = 0;
    at.body_point = p_world;
  } else if (surface_id == kIdTable) {
    at.kind = AttachKind::table;
    at.body_id = 0;
    at.body_point = p_world;
  } else if (surface_id >= kIdLinkBase) {
    at.kind = AttachKind::link;
    at.index = surface_id - kIdLinkBase;
    at.body_id = ep.body_id_of_link(at.index);
    at.body_point = kin::apply(body_poses[std::size_t(at.body_id)].inverse(), p_world);
  } else {
    at.kind = AttachKind::object;
    at.index = surface_id - kIdObjectBase;
    at.body_id = ep.body_id_of_object(at.index);
    at.body_point = kin::apply(body_poses[std::size_t(at.body_id)].inverse(), p_world);
  }
  return at;
}

inline Episode simulate_episode(const SceneSpec& spec, const GantryRig* rig,
                                const TaskScript& task, int grid, double fps,
                                std::uint64_t seed) {
  spec.validate();
  task.validate(spec);
  if (grid < 2) throw std::invalid_argument("grid size must be >= 2");
  int substeps = int(std::lround(kSimRate / fps));
  if (substeps < 1 || std::abs(kSimRate / fps - substeps) > 1e-9)
    throw std::invalid_argument("fps must divide the 50 Hz simulation rate");

  Rng placement_rng(sub_seed(seed, 1));
  Rng camera_rng(sub_seed(seed, 3));

  std::vector<kin::RigidTransform> object_poses = sample_placement(spec, task, placement_rng);
  EffectorTrajectory traj =
      script_task(spec, object_poses, task, sub_seed(seed, 2),
                  spec.regime == Regime::robot ? rig : nullptr);

  std::vector<CameraPath> cams;
  for (std::size_t v = 0; v < spec.cameras.size(); ++v) {
    if (spec.regime == Regime::human_proxy && v == 0)
      cams.push_back(
          make_moving_camera_path(spec.cameras[v], spec.workspace, traj.duration, camera_rng));
    else
      cams.push_back({spec.cameras[v], false, {}, {}, 1.2});
  }

  Episode ep;
  ep.instruction = task.instruction;
  ep.regime = spec.regime;
  ep.task_kind = task.kind;
  ep.seed = seed;
  ep.fps = fps;
  ep.grid_size = grid;
  ep.views = int(spec.cameras.size());
  ep.raster_width = spec.cameras[0].width;
  ep.raster_height = spec.cameras[0].height;
  ep.n_objects = int(spec.objects.size());

  Simulator sim(spec, rig, object_poses);
  ep.n_links = sim.n_links();

  int n_steps = int(std::ceil(traj.duration * kSimRate)) + 1;
  int last_grasp = -1;
  int grasp_start = 0;
  kin::RigidTransform grasp_rel;

  for (int k = 0; k < n_steps; ++k) {
    double t = double(k) / kSimRate;
    EffectorSample s = traj.at(t);
    sim.set_effector(s.pos, s.yaw, s.gripper_closed);
    if (k % substeps != 0) continue;

    Frame f;
    f.time_index = k / substeps;
    for (std::size_t v = 0; v < cams.size(); ++v) {
      CameraModel cam = cams[v].at(t);
      f.camera_pose.push_back(cam.pose);
      f.depth.push_back(sim.render(cam).depth);
    }
    f.body_poses = sim.body_poses();
    f.state = sim.proprio();

    if (ep.frames.empty()) {
      CameraModel cam0 = cams[0].at(t);
      RenderScene rs = sim.render_scene();
      DepthImage img0 = render_depth(rs, cam0);
      GridInit grid_init = init_point_grid(img0, cam0, grid, spec.max_depth);
      for (int j = 0; j < grid * grid; ++j)
        ep.attachments.push_back(make_attachment(ep, grid_init.ids[std::size_t(j)],
                                                 grid_init.coords.row(j).transpose(), cam0,
                                                 f.body_poses));
    }

    f.points.coords.resize(ep.n_points(), 3);
    for (int j = 0; j < ep.n_points(); ++j) {
      const Attachment& at = ep.attachments[std::size_t(j)];
      Vector3d world = kin::apply(f.body_poses[std::size_t(at.body_id)], at.body_point);
      f.points.coords.row(j) = kin::apply(f.camera_pose[0], world).transpose();
    }

    int cur = sim.grasped() ? *sim.grasped() : -1;
    int frame_idx = int(ep.frames.size());
    if (cur != last_grasp) {
      if (last_grasp >= 0) ep.grasps.push_back({last_grasp, grasp_start, frame_idx, grasp_rel});
      if (cur >= 0) {
        grasp_start = frame_idx;
        grasp_rel = sim.grasp_rel();
      }
      last_grasp = cur;
    }
    ep.frames.push_back(std::move(f));
    if (int(ep.frames.size()) > kMaxEpisodeFrames)
      throw ScriptError("episode exceeds 256 frames");
  }
  if (last_grasp >= 0)
    ep.grasps.push_back({last_grasp, grasp_start, int(ep.frames.size()), grasp_rel});
  ep.validate();
  return ep;
}

}  // namespace trackctl
