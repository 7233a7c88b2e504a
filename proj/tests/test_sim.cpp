#include <doctest.h>

#include "trackctl/datagen.hpp"
#include "trackctl/sim.hpp"
#include "trackctl/verify.hpp"

#include "test_helpers.hpp"

using namespace trackctl;

namespace {

GantryRig test_rig() { return make_gantry_rig(default_workspace()); }

Episode robot_episode(TaskKind kind, std::uint64_t seed, const GantryRig& rig) {
  DatagenOptions opt;
  opt.regime = Regime::robot;
  opt.kinds = {kind};
  if (kind == TaskKind::pick) opt.target_noun = "cube";
  EpisodeSpec es = make_episode_spec(opt, rig, seed);
  return simulate_episode(es.scene, &rig, es.task, 16, 10.0, seed);
}

Episode human_episode(TaskKind kind, std::uint64_t seed, const GantryRig& rig) {
  DatagenOptions opt;
  opt.regime = Regime::human_proxy;
  opt.kinds = {kind};
  opt.max_distractors = 1;
  EpisodeSpec es = make_episode_spec(opt, rig, seed);
  return simulate_episode(es.scene, nullptr, es.task, 16, 10.0, seed);
}

}  // namespace

TEST_CASE("robot pick demo lifts the target with a closed gripper") {
  GantryRig rig = test_rig();
  DatagenOptions opt;
  opt.kinds = {TaskKind::pick};
  EpisodeSpec es = make_episode_spec(opt, rig, 100);
  Episode ep = simulate_episode(es.scene, &rig, es.task, 16, 10.0, 100);
  int target = es.scene.object_index(es.task.target_label);
  REQUIRE(target >= 0);
  int body = ep.body_id_of_object(target);
  double z0 = ep.frames.front().body_poses[std::size_t(body)].t.z();
  double z1 = ep.frames.back().body_poses[std::size_t(body)].t.z();
  CHECK(z1 - z0 >= 0.10);
  CHECK(ep.frames.back().state.gripper == 1.0);
  CHECK(!ep.grasps.empty());
  CHECK(ep.grasps.back().object_index == target);
}

TEST_CASE("same seed twice gives a bitwise-identical episode") {
  GantryRig rig = test_rig();
  Episode a = robot_episode(TaskKind::pick, 7, rig);
  Episode b = robot_episode(TaskKind::pick, 7, rig);
  CHECK(testing::episodes_equal(a, b));
  Episode c = human_episode(TaskKind::stack, 9, rig);
  Episode d = human_episode(TaskKind::stack, 9, rig);
  CHECK(testing::episodes_equal(c, d));
}

TEST_CASE("static bodies under a static camera keep identical coordinates") {
  GantryRig rig = test_rig();
  Episode ep = robot_episode(TaskKind::pick, 21, rig);
  int moved = 0;
  for (int j = 0; j < ep.n_points(); ++j) {
    const Attachment& at = ep.attachments[std::size_t(j)];
    if (at.body_id != 0) continue;  // world-attached: table, background
    for (const auto& f : ep.frames) {
      if (f.points.coords.row(j) != ep.frames.front().points.coords.row(j)) ++moved;
    }
  }
  CHECK(moved == 0);
}

TEST_CASE("camera motion shifts points by the camera pose change") {
  GantryRig rig = test_rig();
  Episode ep = human_episode(TaskKind::free_motion, 33, rig);
  const Frame& f0 = ep.frames.front();
  double worst = 0.0;
  for (std::size_t t = 0; t < ep.frames.size(); ++t) {
    const Frame& f = ep.frames[t];
    kin::RigidTransform delta = kin::compose(f.camera_pose[0], f0.camera_pose[0].inverse());
    for (int j = 0; j < ep.n_points(); ++j) {
      if (ep.attachments[std::size_t(j)].body_id != 0) continue;
      Vector3d expect = kin::apply(delta, f0.points.coords.row(j).transpose());
      worst = std::max(worst, (expect - f.points.coords.row(j).transpose()).norm());
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("episodes satisfy the rigid-body consistency oracle") {
  GantryRig rig = test_rig();
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    for (TaskKind kind : {TaskKind::pick, TaskKind::stack, TaskKind::destack,
                          TaskKind::pick_place, TaskKind::push}) {
      Episode ep = robot_episode(kind, seed, rig);
      ConsistencyReport rep = verify_episode_consistency(ep, &rig);
      CHECK(rep.worst() < 1e-9);
    }
    Episode hep = human_episode(TaskKind::pick, seed, rig);
    CHECK(verify_episode_consistency(hep, nullptr).worst() < 1e-9);
  }
}

TEST_CASE("grasped-cube points match the forward-kinematics chain directly") {
  GantryRig rig = test_rig();
  Episode ep = robot_episode(TaskKind::pick, 55, rig);
  REQUIRE(!ep.grasps.empty());
  const GraspInterval& gi = ep.grasps.back();
  int body = ep.body_id_of_object(gi.object_index);
  int checked = 0;
  for (int j = 0; j < ep.n_points(); ++j) {
    const Attachment& at = ep.attachments[std::size_t(j)];
    if (at.body_id != body) continue;
    for (int t = gi.start_frame; t < gi.end_frame; ++t) {
      const Frame& f = ep.frames[std::size_t(t)];
      kin::JointConfig q = rig.config_from_state(f.state);
      Vector3d world = kin::body_point_world(
          rig.model, q, {rig.model.n_dof(), kin::apply(gi.rel, at.body_point)});
      Vector3d expect = kin::apply(f.camera_pose[0], world);
      CHECK((expect - f.points.coords.row(j).transpose()).norm() < 1e-9);
      ++checked;
    }
  }
  CHECK(checked > 0);  // the grid actually covered the cube
}

TEST_CASE("first-frame grid points re-project onto their pixels") {
  GantryRig rig = test_rig();
  Episode ep = robot_episode(TaskKind::pick, 77, rig);
  CameraModel cam = default_camera(ep.raster_width);
  int g = ep.grid_size;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      Vector3d p = ep.frames[0].points.coords.row(i * g + j).transpose();
      Eigen::Vector2d uv = cam.project(p);
      int u = std::min(ep.raster_width - 1, (2 * j + 1) * ep.raster_width / (2 * g));
      int v = std::min(ep.raster_height - 1, (2 * i + 1) * ep.raster_height / (2 * g));
      CHECK(std::abs(uv.x() - (u + 0.5)) <= 0.5);
      CHECK(std::abs(uv.y() - (v + 0.5)) <= 0.5);
    }
  }
}

TEST_CASE("push demo presses buttons in the commanded order") {
  GantryRig rig = test_rig();
  DatagenOptions opt;
  opt.kinds = {TaskKind::push};
  EpisodeSpec es = make_episode_spec(opt, rig, 200);
  Episode ep = simulate_episode(es.scene, &rig, es.task, 16, 10.0, 200);
  CHECK(ep.length() >= 2);

  // replay through a simulator to inspect the press sequence
  Rng prng(sub_seed(200, 1));
  auto poses = sample_placement(es.scene, es.task, prng);
  Simulator sim(es.scene, &rig, poses);
  for (const auto& f : ep.frames)
    sim.set_effector(f.state.position, f.state.euler.z(), f.state.gripper > 0.5);
  REQUIRE(sim.press_sequence().size() == 2);
  CHECK(sim.press_sequence()[0] == es.scene.object_index(es.task.target_label));
  CHECK(sim.press_sequence()[1] == es.scene.object_index(es.task.second_label));
}

TEST_CASE("stack demo ends with the target resting on the base") {
  GantryRig rig = test_rig();
  DatagenOptions opt;
  opt.kinds = {TaskKind::stack};
  EpisodeSpec es = make_episode_spec(opt, rig, 300);
  Episode ep = simulate_episode(es.scene, &rig, es.task, 16, 10.0, 300);
  int top = es.scene.object_index(es.task.target_label);
  int base = es.scene.object_index(es.task.second_label);
  const Frame& last = ep.frames.back();
  Vector3d tp = last.body_poses[std::size_t(ep.body_id_of_object(top))].t;
  Vector3d bp = last.body_poses[std::size_t(ep.body_id_of_object(base))].t;
  CHECK((tp.head<2>() - bp.head<2>()).norm() < 0.03);
  CHECK(tp.z() > bp.z());
  CHECK(last.state.gripper == 0.0);
}

TEST_CASE("unreachable scripts raise after 10 attempts") {
  GantryRig rig = test_rig();
  DatagenOptions opt;
  opt.kinds = {TaskKind::pick};
  EpisodeSpec es = make_episode_spec(opt, rig, 400);
  es.scene.workspace.hi.z() = 0.12;  // home waypoints always start higher
  CHECK_THROWS_AS(simulate_episode(es.scene, &rig, es.task, 16, 10.0, 400), ScriptError);
}

TEST_CASE("proprio states wrap angles and keep the gripper binary") {
  GantryRig rig = test_rig();
  Episode ep = robot_episode(TaskKind::destack, 85, rig);
  for (const auto& f : ep.frames) {
    for (int i = 0; i < 3; ++i) {
      CHECK(f.state.euler[i] >= -M_PI);
      CHECK(f.state.euler[i] < M_PI);
    }
    CHECK((f.state.gripper == 0.0 || f.state.gripper == 1.0));
  }
}
