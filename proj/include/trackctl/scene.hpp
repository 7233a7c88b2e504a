#pragma once

// Scene and task descriptions consumed by the simulator: rigid objects on a
// table, an optional manipulator, one or two cameras, and scripted tasks.

#include "trackctl/camera.hpp"
#include "trackctl/kinematics.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace trackctl {

enum class Regime : std::uint8_t { human_proxy = 0, robot = 1 };
enum class TaskKind : std::uint8_t {
  pick = 0,
  stack = 1,
  destack = 2,
  pick_place = 3,
  push = 4,
  free_motion = 5
};
enum class ShapeKind : std::uint8_t { box = 0, sphere = 1 };

inline const char* to_string(Regime r) { return r == Regime::robot ? "robot" : "human-proxy"; }
inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::pick: return "pick";
    case TaskKind::stack: return "stack";
    case TaskKind::destack: return "destack";
    case TaskKind::pick_place: return "pick-and-place";
    case TaskKind::push: return "push";
    default: return "free-motion";
  }
}
inline Regime regime_from_string(const std::string& s) {
  if (s == "robot") return Regime::robot;
  if (s == "human-proxy" || s == "human_proxy") return Regime::human_proxy;
  throw std::invalid_argument("unknown regime: " + s);
}
inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "pick") return TaskKind::pick;
  if (s == "stack") return TaskKind::stack;
  if (s == "destack") return TaskKind::destack;
  if (s == "pick-and-place" || s == "pick_place") return TaskKind::pick_place;
  if (s == "push") return TaskKind::push;
  if (s == "free-motion" || s == "free_motion") return TaskKind::free_motion;
  throw std::invalid_argument("unknown task kind: " + s);
}

struct ProprioState {
  Vector3d position = Vector3d::Zero();  // m
  Vector3d euler = Vector3d::Zero();     // rad, intrinsic XYZ, wrapped to [-pi, pi)
  double gripper = 0.0;                  // binary {0, 1}

  void wrap() {
    for (int i = 0; i < 3; ++i) euler[i] = kin::wrap_angle(euler[i]);
  }
  Eigen::Matrix<double, 7, 1> vector() const {
    Eigen::Matrix<double, 7, 1> v;
    v << position, euler, gripper;
    return v;
  }
  static ProprioState from_vector(const Eigen::Matrix<double, 7, 1>& v) {
    ProprioState s;
    s.position = v.head<3>();
    s.euler = v.segment<3>(3);
    s.gripper = v[6];
    return s;
  }
};

struct ObjectSpec {
  std::string label;  // "yellow cube", "red button", ...
  ShapeKind kind = ShapeKind::box;
  Vector3d half_extents = {0.02, 0.02, 0.02};  // box
  double radius = 0.02;                        // sphere
  kin::RigidTransform init_pose;
  bool is_container = false;
  bool is_button = false;

  bool graspable() const { return !is_container && !is_button; }
  double top_offset() const { return kind == ShapeKind::box ? half_extents.z() : radius; }
  double rest_half_height() const { return top_offset(); }
};

struct BoxGeom {
  Vector3d half_extents;
  kin::RigidTransform pose;  // body or world frame, per context
};

struct ArmVisual {
  std::vector<std::vector<BoxGeom>> link_boxes;  // per link, link-frame
};

struct WorkspaceBounds {
  Vector3d lo = {-0.3, -0.3, 0.0};
  Vector3d hi = {0.3, 0.3, 0.5};

  bool contains(const Vector3d& p, double margin = 0.0) const {
    return (p.array() >= lo.array() - margin).all() && (p.array() <= hi.array() + margin).all();
  }
  Vector3d clamp(const Vector3d& p) const { return p.cwiseMax(lo).cwiseMin(hi); }
  Vector3d center() const { return 0.5 * (lo + hi); }
};

// Fixed gripper geometry shared by the robot end-effector and the floating
// human-proxy hand. The frame origin is the grasp point between the fingers.
struct GripperGeom {
  Vector3d palm_half = {0.045, 0.016, 0.018};
  Vector3d finger_half = {0.008, 0.007, 0.034};
  double palm_z = 0.062;    // palm center above the tip
  double finger_z = 0.026;  // finger center above the tip
  double open_gap = 0.070;  // center-to-center finger distance
  double closed_gap = 0.030;
};

struct SceneSpec {
  Regime regime = Regime::robot;
  std::optional<kin::ManipulatorModel> arm;
  ArmVisual arm_visual;
  GripperGeom gripper;
  std::vector<ObjectSpec> objects;
  double table_height = 0.0;
  std::vector<CameraModel> cameras;
  WorkspaceBounds workspace;
  std::vector<BoxGeom> decor;  // static world-frame background geometry
  double max_depth = 2.5;      // render range / far-plane distance, m

  void validate() const {
    if (regime == Regime::robot && !arm)
      throw std::invalid_argument("robot regime requires an arm model");
    if (arm) {
      arm->validate();
      if (!arm_visual.link_boxes.empty() &&
          int(arm_visual.link_boxes.size()) != arm->n_dof())
        throw std::invalid_argument("arm visual boxes must cover every link");
    }
    if (cameras.empty() || cameras.size() > 2)
      throw std::invalid_argument("scene requires 1 or 2 cameras");
    for (const auto& c : cameras) c.validate();
    if (max_depth <= 0) throw std::invalid_argument("max_depth must be > 0");
    for (const auto& o : objects)
      if (!workspace.contains(o.init_pose.t, 1e-9))
        throw std::invalid_argument("object '" + o.label + "' starts outside workspace bounds");
  }

  int object_index(const std::string& label) const {
    for (std::size_t i = 0; i < objects.size(); ++i)
      if (objects[i].label == label) return int(i);
    return -1;
  }
};

struct TaskScript {
  TaskKind kind = TaskKind::pick;
  std::string target_label;
  std::string second_label;      // stack base / second button / container
  std::string distractor_label;  // optional
  std::uint64_t waypoint_seed = 0;
  std::string instruction;  // "verb noun"

  void validate(const SceneSpec& spec) const {
    auto need = [&](const std::string& label, const char* role) {
      if (!label.empty() && spec.object_index(label) < 0)
        throw std::invalid_argument(std::string("task references unknown ") + role + " '" +
                                    label + "'");
    };
    if (kind != TaskKind::free_motion && target_label.empty())
      throw std::invalid_argument("task requires a target label");
    need(target_label, "target");
    need(second_label, "second target");
    need(distractor_label, "distractor");
    if ((kind == TaskKind::stack || kind == TaskKind::pick_place || kind == TaskKind::push) &&
        second_label.empty())
      throw std::invalid_argument("task kind requires a second object label");
    if (instruction.empty()) throw std::invalid_argument("task requires an instruction");
  }
};

}  // namespace trackctl
