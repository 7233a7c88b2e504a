#include <doctest.h>

#include "trackctl/evalsuite.hpp"

#include <filesystem>

using namespace trackctl;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(ModelStage stage) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context = 4;
  c.grid = 4;
  c.views = 1;
  c.horizon = 4;
  c.vocab = 32;
  c.patch = 4;
  c.raster_w = 16;
  c.raster_h = 16;
  c.stage = stage;
  return c;
}

DatagenOptions tiny_opt(Regime regime, TaskKind kind) {
  DatagenOptions opt;
  opt.regime = regime;
  opt.kinds = {kind};
  opt.resolution = 16;
  if (kind == TaskKind::pick) opt.target_noun = "cube";
  return opt;
}

Episode gen_episode(const GantryRig& rig, const DatagenOptions& opt, std::uint64_t seed,
                    int grid = 4) {
  EpisodeSpec es = make_episode_spec(opt, rig, seed);
  return simulate_episode(es.scene, opt.regime == Regime::robot ? &rig : nullptr, es.task, grid,
                          10.0, seed);
}

// Replays a demonstration's executed states through a fresh simulator and
// evaluates the task predicate at the end.
bool demo_passes_own_predicate(const GantryRig& rig, const DatagenOptions& opt,
                               std::uint64_t seed) {
  EpisodeSpec es = make_episode_spec(opt, rig, seed);
  Episode ep = simulate_episode(es.scene, &rig, es.task, 4, 10.0, seed);
  Rng prng(sub_seed(seed, 1));
  auto placement = sample_placement(es.scene, es.task, prng);
  Simulator sim(es.scene, &rig, placement);
  TaskRefs refs = make_task_refs(es.scene, es.task, placement);
  for (const auto& f : ep.frames)
    sim.set_effector(f.state.position, f.state.euler.z(), f.state.gripper > 0.5);
  return success_predicate(es.task.kind, sim, refs);
}

}  // namespace

TEST_CASE("tracking error basics and analytic values") {
  Mat<double> gt = Mat<double>::Zero(4, 6);  // 2 points, 4 frames
  TrackingError zero = tracking_error(gt, gt, 2);
  CHECK(zero.l1_per_frame == 0.0);
  CHECK(zero.mean_euclid == 0.0);

  Mat<double> pred = gt;
  for (int r = 0; r < 4; ++r)
    for (int j = 0; j < 2; ++j) pred(r, 3 * j) += 0.01;
  TrackingError shifted = tracking_error(pred, gt, 2);
  CHECK(shifted.l1_per_frame == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(shifted.mean_euclid == doctest::Approx(0.01).epsilon(1e-12));

  CHECK_THROWS_AS(tracking_error(pred, Mat<double>::Zero(3, 6), 2), std::invalid_argument);
}

TEST_CASE("copy-last baseline: static, moving, and brute-force agreement") {
  // synthetic static episode: baseline error is exactly zero
  Episode ep;
  ep.grid_size = 2;
  ep.views = 1;
  ep.raster_width = ep.raster_height = 8;
  ep.n_objects = 0;
  ep.n_links = 1;
  ep.attachments.resize(4);
  for (int t = 0; t < 3; ++t) {
    Frame f;
    f.points.coords = Eigen::MatrixX3d::Constant(4, 3, 0.5);
    ep.frames.push_back(f);
  }
  TrackingError st = tracking_error(baseline_copy_last(ep), episode_track_targets(ep), 4);
  CHECK(st.l1_per_frame == 0.0);

  // uniform per-step displacement d: baseline error equals |d| components
  for (int t = 0; t < 3; ++t) ep.frames[std::size_t(t)].points.coords.col(2).setConstant(0.5 + 0.02 * t);
  TrackingError mv = tracking_error(baseline_copy_last(ep), episode_track_targets(ep), 4);
  CHECK(mv.l1_per_frame == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(mv.mean_euclid == doctest::Approx(0.02).epsilon(1e-12));

  // real generated episode vs an independent recomputation from raw arrays
  GantryRig rig = make_gantry_rig(default_workspace());
  Episode rep = gen_episode(rig, tiny_opt(Regime::robot, TaskKind::pick), 42);
  TrackingError te = tracking_error(baseline_copy_last(rep), episode_track_targets(rep),
                                    rep.n_points());
  double l1 = 0, eu = 0;
  const int T = rep.length(), n = rep.n_points();
  for (int t = 0; t + 1 < T; ++t) {
    double fl1 = 0;
    for (int j = 0; j < n; ++j) {
      Vector3d d = rep.frames[std::size_t(t)].points.coords.row(j) -
                   rep.frames[std::size_t(t + 1)].points.coords.row(j);
      fl1 += std::abs(d.x()) + std::abs(d.y()) + std::abs(d.z());
      eu += d.norm();
    }
    l1 += fl1 / n;
  }
  CHECK(te.l1_per_frame == doctest::Approx(l1 / (T - 1)).epsilon(1e-12));
  CHECK(te.mean_euclid == doctest::Approx(eu / double((T - 1) * n)).epsilon(1e-12));
}

TEST_CASE("predict_tracks shape and normalization round trip") {
  GantryRig rig = make_gantry_rig(default_workspace());
  Episode ep = gen_episode(rig, tiny_opt(Regime::robot, TaskKind::pick), 43);
  Parameters<float> p(tiny_config(ModelStage::track));
  p.init(9);
  NormalizationSpec n;
  Mat<double> preds = predict_tracks(p, ep, n, global_vocab());
  CHECK(preds.rows() == ep.length() - 1);
  CHECK(preds.cols() == 48);

  Mat<double> gt = episode_track_targets(ep);
  Mat<double> round = denormalize_track_matrix(normalize_track_matrix(gt, n), n);
  CHECK((round - gt).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("scripted demonstrations satisfy their own success predicates") {
  GantryRig rig = make_gantry_rig(default_workspace());
  int total = 0, passed = 0;
  for (TaskKind kind : {TaskKind::pick, TaskKind::stack, TaskKind::destack, TaskKind::pick_place,
                        TaskKind::push}) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      ++total;
      if (demo_passes_own_predicate(rig, tiny_opt(Regime::robot, kind), 500 + seed * 17 +
                                        std::uint64_t(kind) * 1000))
        ++passed;
    }
  }
  CHECK(passed == total);
}

TEST_CASE("predicates reject untouched and offset scenes") {
  GantryRig rig = make_gantry_rig(default_workspace());
  DatagenOptions opt = tiny_opt(Regime::robot, TaskKind::pick);
  EpisodeSpec es = make_episode_spec(opt, rig, 77);
  Rng prng(sub_seed(77, 1));
  auto placement = sample_placement(es.scene, es.task, prng);
  Simulator sim(es.scene, &rig, placement);
  TaskRefs refs = make_task_refs(es.scene, es.task, placement);
  CHECK_FALSE(success_predicate(TaskKind::pick, sim, refs));  // nothing happened

  // stack with a 5 cm lateral offset fails the 3 cm tolerance
  DatagenOptions sopt = tiny_opt(Regime::robot, TaskKind::stack);
  EpisodeSpec ss = make_episode_spec(sopt, rig, 78);
  Rng prng2(sub_seed(78, 1));
  auto placement2 = sample_placement(ss.scene, ss.task, prng2);
  TaskRefs refs2 = make_task_refs(ss.scene, ss.task, placement2);
  // teleport the top cube to 5 cm beside the base, at stacked height
  int top = refs2.target, base = refs2.second;
  Simulator sim2(ss.scene, &rig, placement2);
  Vector3d goal = sim2.object(base).pose.t;
  goal.x() += 0.05;
  goal.z() = sim2.object(base).pose.t.z() + sim2.object(base).spec.top_offset() +
             sim2.object(top).spec.rest_half_height();
  sim2.teleport_object(top, goal - sim2.object(top).pose.t);
  CHECK_FALSE(success_predicate(TaskKind::stack, sim2, refs2));
}

TEST_CASE("replaying a demonstration through rollout succeeds; budget 1 fails") {
  GantryRig rig = make_gantry_rig(default_workspace());
  DatagenOptions opt = tiny_opt(Regime::robot, TaskKind::pick);
  EpisodeSpec es = make_episode_spec(opt, rig, 91);
  Episode demo = simulate_episode(es.scene, &rig, es.task, 4, 10.0, 91);

  ReplayPolicy replay(demo, 4);
  RolloutResult ok = rollout_with_policy(replay, es.scene, &rig, es.task, 91, {});
  CHECK(ok.success);
  CHECK(ok.steps <= demo.length());

  ReplayPolicy replay2(demo, 4);
  RolloutOptions tight;
  tight.budget_override = 1;
  RolloutResult fail = rollout_with_policy(replay2, es.scene, &rig, es.task, 91, tight);
  CHECK_FALSE(fail.success);
  CHECK(fail.steps == 1);
}

TEST_CASE("rollout is deterministic and clamps out-of-bounds commands") {
  GantryRig rig = make_gantry_rig(default_workspace());
  DatagenOptions opt = tiny_opt(Regime::robot, TaskKind::pick);
  EpisodeSpec es = make_episode_spec(opt, rig, 92);
  Parameters<float> p(tiny_config(ModelStage::control));
  p.init(10);
  NormalizationSpec n;
  RolloutOptions ro;
  ro.budget_override = 12;
  RolloutResult a = rollout(p, n, es.scene, &rig, es.task, 92, ro);
  RolloutResult b = rollout(p, n, es.scene, &rig, es.task, 92, ro);
  CHECK(a.steps == b.steps);
  CHECK(a.success == b.success);
  REQUIRE(a.executed.size() == b.executed.size());
  for (std::size_t i = 0; i < a.executed.size(); ++i) CHECK(a.executed[i] == b.executed[i]);

  struct Escape : ControlPolicy {
    void reset() override {}
    std::vector<ProprioState> step(const std::vector<std::vector<float>>&,
                                   const ProprioState&) override {
      ProprioState s;
      s.position = {9.0, 9.0, 9.0};  // far outside the workspace
      return std::vector<ProprioState>(4, s);
    }
  } escape;
  RolloutResult clamped = rollout_with_policy(escape, es.scene, &rig, es.task, 92, ro);
  CHECK(clamped.bounds_flagged);
  const auto& ws = es.scene.workspace;
  for (const auto& st : clamped.executed) {
    CHECK(st[0] <= ws.hi.x() + 1e-12);
    CHECK(st[2] <= ws.hi.z() + 1e-12);
  }
}

TEST_CASE("disturbance triggers once during descent") {
  GantryRig rig = make_gantry_rig(default_workspace());
  DatagenOptions opt = tiny_opt(Regime::robot, TaskKind::pick);
  EpisodeSpec es = make_episode_spec(opt, rig, 93);
  Episode demo = simulate_episode(es.scene, &rig, es.task, 4, 10.0, 93);
  ReplayPolicy replay(demo, 4);
  RolloutOptions ro;
  ro.disturbance = DisturbanceSpec{};  // 1/3 descent, 5 cm
  RolloutResult r = rollout_with_policy(replay, es.scene, &rig, es.task, 93, ro);
  CHECK(r.disturbed);
  // the replayed script is blind to the disturbance, so the pick must fail
  CHECK_FALSE(r.success);
}

TEST_CASE("default ablation grid is 25 episodes x 3 seeds with fixed arms") {
  AblationConfig cfg;
  CHECK(cfg.episodes_per_seed == 25);
  CHECK(cfg.eval_seeds == std::vector<std::uint64_t>{1, 2, 3});
  auto arms = ablation_arms();
  REQUIRE(arms.size() == 4);
  CHECK(arms[0].name == "s123");
  CHECK(arms[3].name == "s3");
}
