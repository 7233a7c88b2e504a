#pragma once

// Scripted demonstration generation: waypoint sequences with linear
// effector-space interpolation, per-waypoint pose randomization, and the
// smooth random camera path used by the human-proxy regime.

#include "trackctl/camera.hpp"
#include "trackctl/gantry.hpp"
#include "trackctl/scene.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace trackctl {

struct ScriptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Waypoint {
  Vector3d pos = Vector3d::Zero();
  double yaw = 0.0;
  bool gripper_closed = false;
  double speed = 0.22;  // m/s toward this waypoint
  double dwell = 0.0;   // s at this waypoint
};

struct EffectorSample {
  Vector3d pos;
  double yaw;
  bool gripper_closed;
};

struct EffectorTrajectory {
  std::vector<Waypoint> wps;
  std::vector<double> arrive, depart;
  double duration = 0.0;

  void finalize() {
    arrive.assign(wps.size(), 0.0);
    depart.assign(wps.size(), 0.0);
    constexpr double yaw_rate = 2.5;  // rad/s
    for (std::size_t i = 0; i < wps.size(); ++i) {
      if (i == 0) {
        arrive[0] = 0.0;
      } else {
        double dist = (wps[i].pos - wps[i - 1].pos).norm();
        double dyaw = std::abs(kin::wrap_angle(wps[i].yaw - wps[i - 1].yaw));
        double dt = std::max({dist / wps[i].speed, dyaw / yaw_rate, 0.05});
        arrive[i] = depart[i - 1] + dt;
      }
      depart[i] = arrive[i] + wps[i].dwell;
    }
    duration = depart.back();
  }

  EffectorSample at(double t) const {
    if (t <= 0.0) return {wps.front().pos, wps.front().yaw, wps.front().gripper_closed};
    if (t >= duration) return {wps.back().pos, wps.back().yaw, wps.back().gripper_closed};
    for (std::size_t i = 0; i < wps.size(); ++i) {
      if (t <= depart[i]) return {wps[i].pos, wps[i].yaw, wps[i].gripper_closed};
      if (i + 1 < wps.size() && t < arrive[i + 1]) {
        double u = (t - depart[i]) / (arrive[i + 1] - depart[i]);
        Vector3d pos = (1 - u) * wps[i].pos + u * wps[i + 1].pos;
        double yaw = wps[i].yaw + u * kin::wrap_angle(wps[i + 1].yaw - wps[i].yaw);
        // gripper switches on arrival, not during travel
        return {pos, kin::wrap_angle(yaw), wps[i].gripper_closed};
      }
    }
    return {wps.back().pos, wps.back().yaw, wps.back().gripper_closed};
  }
};

// ---- camera path ------------------------------------------------------------

namespace detail {
inline Vector3d catmull_rom(const std::vector<Vector3d>& keys, double s) {
  const int n = int(keys.size());
  if (n == 1) return keys[0];
  s = std::clamp(s, 0.0, double(n - 1) - 1e-9);
  int i = int(s);
  double u = s - i;
  auto K = [&](int j) { return keys[std::size_t(std::clamp(j, 0, n - 1))]; };
  Vector3d p0 = K(i - 1), p1 = K(i), p2 = K(i + 1), p3 = K(i + 2);
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * (u * u) +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * (u * u * u));
}
}  // namespace detail

struct CameraPath {
  CameraModel base;  // intrinsics and resolution; pose overridden when animated
  bool animated = false;
  std::vector<Vector3d> eye_keys, target_keys;
  double key_dt = 1.2;

  CameraModel at(double t) const {
    if (!animated) return base;
    CameraModel cam = base;
    double s = t / key_dt;
    Vector3d eye = detail::catmull_rom(eye_keys, s);
    Vector3d target = detail::catmull_rom(target_keys, s);
    cam.pose = camera_look_at(eye, target);
    return cam;
  }
};

// Smooth egocentric-proxy motion: the eye wanders on a shell around the
// workspace while the look-at point jitters near the workspace center.
inline CameraPath make_moving_camera_path(const CameraModel& base, const WorkspaceBounds& ws,
                                          double duration, Rng& rng) {
  CameraPath path;
  path.base = base;
  path.animated = true;
  Vector3d center = ws.center();
  center.z() = ws.lo.z() + 0.08;
  int n_keys = int(duration / path.key_dt) + 4;
  const double az0 = rng.uniform(0, 2 * M_PI);
  double az = az0;
  for (int i = 0; i < n_keys; ++i) {
    // bounded wander keeps every first-frame far-plane point in front of
    // the camera for the whole episode
    az = std::clamp(az + rng.uniform(-0.35, 0.35), az0 - 0.7, az0 + 0.7);
    double el = rng.uniform(0.55, 1.00);
    double r = rng.uniform(0.85, 1.20);
    Vector3d eye = center + r * Vector3d(std::cos(el) * std::cos(az),
                                         std::cos(el) * std::sin(az), std::sin(el));
    Vector3d target = center + Vector3d(rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06),
                                        rng.uniform(-0.03, 0.05));
    path.eye_keys.push_back(eye);
    path.target_keys.push_back(target);
  }
  return path;
}

// ---- task scripting ---------------------------------------------------------

namespace detail {

struct ScriptCtx {
  const SceneSpec& spec;
  const std::vector<kin::RigidTransform>& obj_poses;
  Rng& rng;

  Vector3d obj_pos(int k) const { return obj_poses[std::size_t(k)].t; }
  double obj_top(int k) const {
    return obj_poses[std::size_t(k)].t.z() + spec.objects[std::size_t(k)].top_offset();
  }
  Vector3d rand_xy(double z, double margin = 0.06) {
    return {rng.uniform(spec.workspace.lo.x() + margin, spec.workspace.hi.x() - margin),
            rng.uniform(spec.workspace.lo.y() + margin, spec.workspace.hi.y() - margin), z};
  }
};

inline void build_pick_phase(ScriptCtx& c, std::vector<Waypoint>& wps, int target,
                             double approach_yaw) {
  Vector3d tp = c.obj_pos(target);
  double hover = c.obj_top(target) + c.rng.uniform(0.10, 0.16);
  double slow = c.rng.uniform(0.10, 0.16);
  wps.push_back({{tp.x() + c.rng.uniform(-0.012, 0.012), tp.y() + c.rng.uniform(-0.012, 0.012),
                  hover},
                 approach_yaw,
                 false,
                 c.rng.uniform(0.18, 0.30),
                 0.0});
  wps.push_back({tp, approach_yaw, false, slow, 0.0});
  wps.push_back({tp, approach_yaw, true, slow, c.rng.uniform(0.15, 0.30)});
}

}  // namespace detail

// Waypoint sequence for one demonstration. Throws ScriptError if no
// reachable script is found within 10 attempts.
inline EffectorTrajectory script_task(const SceneSpec& spec,
                                      const std::vector<kin::RigidTransform>& object_poses,
                                      const TaskScript& task, std::uint64_t seed,
                                      const GantryRig* rig) {
  task.validate(spec);
  for (int attempt = 0; attempt < 10; ++attempt) {
    Rng rng(sub_seed(seed, std::uint64_t(attempt)));
    detail::ScriptCtx c{spec, object_poses, rng};
    std::vector<Waypoint> wps;
    const double table = spec.table_height;

    Vector3d home = c.rand_xy(table + rng.uniform(0.24, 0.34), 0.08);
    double home_yaw = rng.uniform(-1.2, 1.2);
    wps.push_back({home, home_yaw, false, 0.22, rng.uniform(0.05, 0.15)});

    int target = task.target_label.empty() ? -1 : spec.object_index(task.target_label);
    int second = task.second_label.empty() ? -1 : spec.object_index(task.second_label);
    double grasp_yaw = rng.uniform(-0.7, 0.7);

    switch (task.kind) {
      case TaskKind::pick: {
        detail::build_pick_phase(c, wps, target, grasp_yaw);
        Vector3d tp = c.obj_pos(target);
        double lift = rng.uniform(0.18, 0.26);
        wps.push_back({{tp.x(), tp.y(), tp.z() + lift}, grasp_yaw, true, 0.22, 0.25});
        break;
      }
      case TaskKind::stack:
      case TaskKind::destack:
      case TaskKind::pick_place: {
        detail::build_pick_phase(c, wps, target, grasp_yaw);
        Vector3d tp = c.obj_pos(target);
        double transport_z = table + rng.uniform(0.16, 0.22);
        wps.push_back({{tp.x(), tp.y(), transport_z}, grasp_yaw, true, 0.22, 0.0});
        Vector3d place;
        double half = spec.objects[std::size_t(target)].rest_half_height();
        if (task.kind == TaskKind::stack) {
          Vector3d bp = c.obj_pos(second);
          place = {bp.x() + rng.uniform(-0.004, 0.004), bp.y() + rng.uniform(-0.004, 0.004),
                   c.obj_top(second) + half + 0.002};
        } else if (task.kind == TaskKind::pick_place) {
          Vector3d bp = c.obj_pos(second);
          place = {bp.x() + rng.uniform(-0.015, 0.015), bp.y() + rng.uniform(-0.015, 0.015),
                   c.obj_top(second) + half + 0.004};
        } else {  // destack: set down on the table, well away from the start
          for (int tries = 0;; ++tries) {
            place = c.rand_xy(table + half + 0.002);
            if ((place.head<2>() - tp.head<2>()).norm() > 0.14 || tries > 50) break;
          }
        }
        double place_yaw = grasp_yaw + rng.uniform(-0.3, 0.3);
        wps.push_back({{place.x(), place.y(), transport_z}, place_yaw, true, 0.22, 0.0});
        wps.push_back({place, place_yaw, true, 0.12, 0.0});
        wps.push_back({place, place_yaw, false, 0.12, rng.uniform(0.12, 0.22)});
        wps.push_back({{place.x(), place.y(), transport_z}, place_yaw, false, 0.20, 0.15});
        break;
      }
      case TaskKind::push: {
        double press_yaw = rng.uniform(-0.4, 0.4);
        for (int btn : {target, second}) {
          if (btn < 0) continue;
          Vector3d bp = c.obj_pos(btn);
          double above = c.obj_top(btn) + rng.uniform(0.08, 0.12);
          wps.push_back({{bp.x(), bp.y(), above}, press_yaw, true, 0.24, 0.0});
          wps.push_back({{bp.x(), bp.y(), c.obj_top(btn) - 0.004}, press_yaw, true, 0.10, 0.10});
          wps.push_back({{bp.x(), bp.y(), above}, press_yaw, true, 0.20, 0.0});
        }
        wps.push_back({{wps.back().pos.x(), wps.back().pos.y(), table + 0.26}, press_yaw, false,
                       0.22, 0.15});
        break;
      }
      case TaskKind::free_motion: {
        int n = int(rng.uniform_int(4, 7));
        bool closed = false;
        for (int i = 0; i < n; ++i) {
          if (rng.uniform() < 0.3) closed = !closed;
          wps.push_back({c.rand_xy(table + rng.uniform(0.05, 0.36)), rng.uniform(-1.6, 1.6),
                         closed, rng.uniform(0.16, 0.30), rng.uniform(0.0, 0.2)});
        }
        break;
      }
    }

    bool ok = true;
    for (const auto& w : wps) {
      bool in_ws = spec.workspace.contains(w.pos, 1e-9);
      bool reach = rig == nullptr || rig->reachable(w.pos, w.yaw);
      if (!in_ws || !reach) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    EffectorTrajectory traj;
    traj.wps = std::move(wps);
    traj.finalize();
    return traj;
  }
  throw ScriptError("no reachable waypoint script after 10 attempts (task " +
                    std::string(to_string(task.kind)) + ")");
}

}  // namespace trackctl
