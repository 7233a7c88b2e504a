#pragma once

// Evaluation: tracking-error metrics against the copy-last baseline,
// closed-loop control rollouts in the simulator (predict a K-step horizon,
// execute the first state, re-observe), task-success predicates, the
// optional mid-descent disturbance protocol, and the four-arm stage
// ablation.

#include "trackctl/forward.hpp"
#include "trackctl/sim.hpp"
#include "trackctl/train.hpp"

#include <deque>
#include <optional>

namespace trackctl {

// ---- tracking metrics ------------------------------------------------------

struct TrackingError {
  double l1_per_frame = 0.0;  // (1/n) L1 over all coordinates, averaged over frames
  double mean_euclid = 0.0;   // mean per-point Euclidean displacement error
};

// pred/gt: [T-1, n*3] in consistent units (meters when denormalized).
inline TrackingError tracking_error(const Mat<double>& pred, const Mat<double>& gt,
                                    int n_points) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || pred.cols() != 3 * n_points)
    throw std::invalid_argument("tracking_error shape mismatch");
  TrackingError te;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    double l1 = 0.0;
    for (Eigen::Index c = 0; c < pred.cols(); ++c) l1 += std::abs(pred(r, c) - gt(r, c));
    te.l1_per_frame += l1 / n_points;
    for (int j = 0; j < n_points; ++j) {
      Eigen::Vector3d d(pred(r, 3 * j) - gt(r, 3 * j), pred(r, 3 * j + 1) - gt(r, 3 * j + 1),
                        pred(r, 3 * j + 2) - gt(r, 3 * j + 2));
      te.mean_euclid += d.norm();
    }
  }
  te.l1_per_frame /= double(pred.rows());
  te.mean_euclid /= double(pred.rows() * n_points);
  return te;
}

// Ground-truth next-frame coordinates, flattened like model outputs.
inline Mat<double> episode_track_targets(const Episode& ep) {
  const int T = ep.length(), n = ep.n_points();
  Mat<double> gt(T - 1, 3 * n);
  for (int t = 0; t + 1 < T; ++t)
    for (int j = 0; j < n; ++j)
      for (int c = 0; c < 3; ++c) gt(t, 3 * j + c) = ep.frames[std::size_t(t + 1)].points.coords(j, c);
  return gt;
}

// Copy-last baseline: predicts p_{t+1} = p_t.
inline Mat<double> baseline_copy_last(const Episode& ep) {
  const int T = ep.length(), n = ep.n_points();
  Mat<double> pred(T - 1, 3 * n);
  for (int t = 0; t + 1 < T; ++t)
    for (int j = 0; j < n; ++j)
      for (int c = 0; c < 3; ++c) pred(t, 3 * j + c) = ep.frames[std::size_t(t)].points.coords(j, c);
  return pred;
}

// Teacher-forced next-frame predictions for a whole episode, in normalized
// units; row t predicts frame t+1 from the trailing <=C-step window.
template <class S>
Mat<double> predict_tracks(const Parameters<S>& p, const Episode& ep,
                           const NormalizationSpec& nspec,
                           const std::vector<std::string>& vocab) {
  if (p.cfg.stage != ModelStage::track)
    throw std::invalid_argument("predict_tracks requires a track-stage model");
  PreppedEpisode<S> pe = prep_episode<S>(ep, nspec, vocab);
  const int T = ep.length();
  Mat<double> out(T - 1, p.cfg.out_dim());
  WindowCache<S> cache;
  for (int t = 0; t + 1 < T; ++t) {
    ModelInput<S> in =
        window_from_prepped(pe, t, p.cfg.context, ModelStage::track, p.cfg.horizon);
    forward_window(p, in, cache, /*with_loss=*/false);
    out.row(t) = cache.preds.row(in.timesteps - 1).template cast<double>();
  }
  return out;
}

inline Mat<double> normalize_track_matrix(const Mat<double>& raw, const NormalizationSpec& n) {
  Mat<double> out = raw;
  for (Eigen::Index r = 0; r < raw.rows(); ++r)
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
      int axis = int(c % 3);
      out(r, c) = axis == 2 ? norm::to_unit(raw(r, c), 0.0, n.point_z_max)
                            : norm::to_unit(raw(r, c), -n.point_lateral, n.point_lateral);
    }
  return out;
}

inline Mat<double> denormalize_track_matrix(const Mat<double>& normd,
                                            const NormalizationSpec& n) {
  Mat<double> out = normd;
  for (Eigen::Index r = 0; r < normd.rows(); ++r)
    for (Eigen::Index c = 0; c < normd.cols(); ++c) {
      int axis = int(c % 3);
      out(r, c) = axis == 2 ? norm::from_unit(normd(r, c), 0.0, n.point_z_max)
                            : norm::from_unit(normd(r, c), -n.point_lateral, n.point_lateral);
    }
  return out;
}

// ---- success predicates ------------------------------------------------

struct TaskRefs {
  int target = -1;
  int second = -1;
  Vector3d target_initial = Vector3d::Zero();
  double table_z = 0.0;
};

inline TaskRefs make_task_refs(const SceneSpec& spec, const TaskScript& task,
                               const std::vector<kin::RigidTransform>& placement) {
  TaskRefs refs;
  refs.target = task.target_label.empty() ? -1 : spec.object_index(task.target_label);
  refs.second = task.second_label.empty() ? -1 : spec.object_index(task.second_label);
  if (refs.target >= 0) refs.target_initial = placement[std::size_t(refs.target)].t;
  refs.table_z = spec.table_height;
  return refs;
}

inline bool success_predicate(TaskKind kind, const Simulator& sim, const TaskRefs& refs) {
  switch (kind) {
    case TaskKind::pick: {
      const SimObject& o = sim.object(refs.target);
      return sim.gripper_closed() &&
             o.pose.t.z() - refs.target_initial.z() >= 0.10;
    }
    case TaskKind::stack: {
      const SimObject& top = sim.object(refs.target);
      const SimObject& base = sim.object(refs.second);
      bool released = !sim.grasped() || *sim.grasped() != refs.target;
      double rest_z = base.pose.t.z() + base.spec.top_offset() + top.spec.rest_half_height();
      return released &&
             (top.pose.t.head<2>() - base.pose.t.head<2>()).norm() <= 0.03 &&
             std::abs(top.pose.t.z() - rest_z) <= 0.012;
    }
    case TaskKind::destack: {
      const SimObject& o = sim.object(refs.target);
      bool released = !sim.grasped() || *sim.grasped() != refs.target;
      return released &&
             (o.pose.t.head<2>() - refs.target_initial.head<2>()).norm() >= 0.10 &&
             std::abs(o.pose.t.z() - (refs.table_z + o.spec.rest_half_height())) <= 0.02;
    }
    case TaskKind::pick_place: {
      const SimObject& o = sim.object(refs.target);
      const SimObject& c = sim.object(refs.second);
      bool released = !sim.grasped() || *sim.grasped() != refs.target;
      Eigen::Vector2d d = (o.pose.t - c.pose.t).head<2>();
      return released && std::abs(d.x()) <= c.spec.half_extents.x() &&
             std::abs(d.y()) <= c.spec.half_extents.y();
    }
    case TaskKind::push: {
      std::vector<int> want;
      if (refs.target >= 0) want.push_back(refs.target);
      if (refs.second >= 0) want.push_back(refs.second);
      return sim.press_sequence() == want;
    }
    case TaskKind::free_motion:
      return true;
  }
  return false;
}

// ---- policies ------------------------------------------------------------

class ControlPolicy {
 public:
  virtual ~ControlPolicy() = default;
  virtual void reset() = 0;
  // One control step: current observation in, K future states out.
  virtual std::vector<ProprioState> step(const std::vector<std::vector<float>>& depth_views,
                                         const ProprioState& state) = 0;
};

// Wraps a control-stage model. Past prediction slots are fed back with the
// model's own (normalized) first-of-horizon predictions, re-encoded by the
// target perceptron inside the forward pass.
template <class S>
class ModelPolicy : public ControlPolicy {
 public:
  ModelPolicy(const Parameters<S>& params, const NormalizationSpec& nspec,
              const std::string& instruction)
      : p_(params), nspec_(nspec) {
    if (p_.cfg.stage != ModelStage::control)
      throw std::invalid_argument("rollout requires a control-stage checkpoint");
    token_ids_ = tokenize(instruction, global_vocab());
  }

  void reset() override {
    depth_.clear();
    states_.clear();
    feedback_.clear();
  }

  std::vector<ProprioState> step(const std::vector<std::vector<float>>& depth_views,
                                 const ProprioState& state) override {
    const ModelConfig& cfg = p_.cfg;
    const int raster = cfg.raster_w * cfg.raster_h;
    if (int(depth_views.size()) != cfg.views)
      throw std::invalid_argument("policy observation view count mismatch");
    Eigen::Matrix<S, 1, Eigen::Dynamic> drow(1, cfg.views * raster);
    for (int v = 0; v < cfg.views; ++v)
      for (int i = 0; i < raster; ++i)
        drow(0, v * raster + i) =
            S(double(depth_views[std::size_t(v)][std::size_t(i)]) / nspec_.max_depth);
    Eigen::Matrix<double, 7, 1> sv = normalize_state(state, nspec_);

    depth_.push_back(drow);
    states_.push_back(sv.cast<S>());
    if (int(depth_.size()) > cfg.context) {
      depth_.pop_front();
      states_.pop_front();
      if (!feedback_.empty()) feedback_.pop_front();
    }

    const int Tw = int(depth_.size());
    ModelInput<S> in;
    in.token_ids = token_ids_;
    in.timesteps = Tw;
    in.depth.resize(Tw, cfg.views * raster);
    in.inputs.resize(Tw, 7);
    in.teacher = Mat<S>::Zero(Tw, 7);
    for (int t = 0; t < Tw; ++t) {
      in.depth.row(t) = depth_[std::size_t(t)];
      in.inputs.row(t) = states_[std::size_t(t)].transpose();
      if (t < int(feedback_.size()))
        in.teacher.row(t) = feedback_[std::size_t(t)].transpose();
    }
    in.target = Mat<S>::Zero(Tw, cfg.out_dim());
    in.mask = Mat<S>::Ones(Tw, cfg.horizon);

    forward_window(p_, in, cache_, /*with_loss=*/false);
    Eigen::Matrix<S, Eigen::Dynamic, 1> pred = cache_.preds.row(Tw - 1).transpose();

    // feed the first predicted state back as this step's prediction token
    Eigen::Matrix<S, 7, 1> first = pred.template head<7>();
    if (int(feedback_.size()) == Tw)
      feedback_.back() = first;
    else
      feedback_.push_back(first);

    std::vector<ProprioState> out;
    for (int k = 0; k < cfg.horizon; ++k) {
      Eigen::Matrix<double, 7, 1> v = pred.template segment<7>(7 * k).template cast<double>();
      ProprioState s = denormalize_state(v, nspec_);
      s.wrap();
      out.push_back(s);
    }
    return out;
  }

 private:
  Parameters<S> p_;
  NormalizationSpec nspec_;
  std::vector<int> token_ids_;
  std::deque<Eigen::Matrix<S, 1, Eigen::Dynamic>> depth_;
  std::deque<Eigen::Matrix<S, 7, 1>> states_;
  std::deque<Eigen::Matrix<S, 7, 1>> feedback_;
  WindowCache<S> cache_;
};

// Replays a demonstration's own states; the self-consistency oracle.
class ReplayPolicy : public ControlPolicy {
 public:
  explicit ReplayPolicy(const Episode& demo, int horizon) : demo_(demo), horizon_(horizon) {}
  void reset() override { cursor_ = 0; }
  std::vector<ProprioState> step(const std::vector<std::vector<float>>&,
                                 const ProprioState&) override {
    std::vector<ProprioState> out;
    for (int k = 0; k < horizon_; ++k) {
      int idx = std::min(demo_.length() - 1, cursor_ + 1 + k);
      out.push_back(demo_.frames[std::size_t(idx)].state);
    }
    ++cursor_;
    return out;
  }

 private:
  const Episode& demo_;
  int horizon_;
  int cursor_ = 0;
};

// ---- rollout ------------------------------------------------------------

struct DisturbanceSpec {
  double descent_fraction = 1.0 / 3.0;
  Vector3d offset = {0.05, 0.0, 0.0};  // lateral teleport
};

struct RolloutOptions {
  int max_steps_multiplier = 4;  // times the scripted demo length
  std::optional<int> budget_override;
  std::optional<DisturbanceSpec> disturbance;
  double fps = 10.0;
};

struct RolloutResult {
  TaskKind task_kind = TaskKind::pick;
  std::uint64_t seed = 0;
  bool success = false;
  int steps = 0;
  int budget = 0;
  ProprioState final_state;
  std::vector<Eigen::Matrix<double, 7, 1>> predicted;  // first-of-horizon per step
  std::vector<Eigen::Matrix<double, 7, 1>> executed;
  bool disturbed = false;
  bool bounds_flagged = false;

  json to_json() const {
    return json{{"task", to_string(task_kind)}, {"seed", seed},
                {"success", success},           {"steps", steps},
                {"budget", budget},             {"disturbed", disturbed},
                {"bounds_flagged", bounds_flagged}};
  }
};

// Closed loop: observe, predict K states, execute the first (gripper
// thresholded at 0.5), re-render; stop on the success predicate or budget.
inline RolloutResult rollout_with_policy(ControlPolicy& policy, const SceneSpec& spec,
                                         const GantryRig* rig, const TaskScript& task,
                                         std::uint64_t seed, const RolloutOptions& opts) {
  spec.validate();
  task.validate(spec);
  Rng placement_rng(sub_seed(seed, 1));
  std::vector<kin::RigidTransform> placement = sample_placement(spec, task, placement_rng);
  EffectorTrajectory demo_traj =
      script_task(spec, placement, task, sub_seed(seed, 2),
                  spec.regime == Regime::robot ? rig : nullptr);
  const int demo_frames = int(demo_traj.duration * opts.fps) + 1;

  RolloutResult res;
  res.task_kind = task.kind;
  res.seed = seed;
  res.budget = opts.budget_override.value_or(opts.max_steps_multiplier * demo_frames);

  Simulator sim(spec, rig, placement);
  TaskRefs refs = make_task_refs(spec, task, placement);
  EffectorSample home = demo_traj.at(0.0);
  sim.set_effector(home.pos, home.yaw, home.gripper_closed);

  const double z_start = home.pos.z();
  const double z_grasp =
      refs.target >= 0 ? placement[std::size_t(refs.target)].t.z() : spec.table_height + 0.02;
  bool disturbance_pending = opts.disturbance.has_value() && refs.target >= 0;

  policy.reset();
  for (int step = 0; step < res.budget; ++step) {
    std::vector<std::vector<float>> depth;
    for (const auto& cam : spec.cameras) depth.push_back(sim.render(cam).depth);
    ProprioState state = sim.proprio();

    std::vector<ProprioState> horizon = policy.step(depth, state);
    const ProprioState& a = horizon.at(0);
    res.predicted.push_back(a.vector());
    sim.set_effector(a.position, a.euler.z(), a.gripper >= 0.5);
    res.executed.push_back(sim.proprio().vector());
    res.steps = step + 1;

    if (disturbance_pending) {
      double denom = std::max(1e-6, z_start - z_grasp);
      double progress = (z_start - sim.ee_pose().t.z()) / denom;
      if (progress >= opts.disturbance->descent_fraction) {
        sim.teleport_object(refs.target, opts.disturbance->offset);
        res.disturbed = true;
        disturbance_pending = false;
      }
    }
    if (success_predicate(task.kind, sim, refs)) {
      res.success = true;
      break;
    }
  }
  res.final_state = sim.proprio();
  res.bounds_flagged = sim.bounds_flagged();
  return res;
}

template <class S>
RolloutResult rollout(const Parameters<S>& params, const NormalizationSpec& nspec,
                      const SceneSpec& spec, const GantryRig* rig, const TaskScript& task,
                      std::uint64_t seed, const RolloutOptions& opts = {}) {
  ModelPolicy<S> policy(params, nspec, task.instruction);
  return rollout_with_policy(policy, spec, rig, task, seed, opts);
}

// ---- evaluation grids and the stage ablation --------------------------------

struct GridResult {
  double mean = 0.0;    // mean success over per-seed rates, percent
  double stddev = 0.0;  // stddev of the per-seed rates
  std::vector<double> per_seed;          // percent per eval seed
  std::vector<std::uint64_t> episode_seeds;  // flattened, for cross-arm identity checks
  std::vector<RolloutResult> rollouts;
};

template <class S>
GridResult rollout_grid(const Parameters<S>& params, const NormalizationSpec& nspec,
                        const DatagenOptions& opt, const GantryRig& rig, int episodes_per_seed,
                        const std::vector<std::uint64_t>& eval_seeds,
                        const RolloutOptions& ropts = {}, int jobs = 1) {
  GridResult gr;
  for (std::uint64_t s : eval_seeds)
    for (int i = 0; i < episodes_per_seed; ++i)
      gr.episode_seeds.push_back(sub_seed(0xe7a1u + s, std::uint64_t(i)));

  gr.rollouts.resize(gr.episode_seeds.size());
  auto run_range = [&](std::size_t lane, std::size_t stride) {
    for (std::size_t i = lane; i < gr.episode_seeds.size(); i += stride) {
      std::uint64_t es = gr.episode_seeds[i];
      EpisodeSpec espec = make_episode_spec(opt, rig, es);
      gr.rollouts[i] = rollout(params, nspec, espec.scene, &rig, espec.task, es, ropts);
    }
  };
  if (jobs <= 1) {
    run_range(0, 1);
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < jobs; ++j) threads.emplace_back(run_range, std::size_t(j), std::size_t(jobs));
    for (auto& t : threads) t.join();
  }

  for (std::size_t s = 0; s < eval_seeds.size(); ++s) {
    int wins = 0;
    for (int i = 0; i < episodes_per_seed; ++i)
      if (gr.rollouts[s * std::size_t(episodes_per_seed) + std::size_t(i)].success) ++wins;
    gr.per_seed.push_back(100.0 * wins / episodes_per_seed);
  }
  for (double v : gr.per_seed) gr.mean += v;
  gr.mean /= double(gr.per_seed.size());
  for (double v : gr.per_seed) gr.stddev += (v - gr.mean) * (v - gr.mean);
  gr.stddev = std::sqrt(gr.stddev / double(gr.per_seed.size()));
  return gr;
}

struct AblationArm {
  std::string name;
  bool use_stage1 = false;
  bool use_stage2 = false;
};

inline std::vector<AblationArm> ablation_arms() {
  return {{"s123", true, true}, {"s13", true, false}, {"s23", false, true}, {"s3", false, false}};
}

struct AblationConfig {
  std::string human_dataset;
  std::string robot_tracks_dataset;
  std::string robot_demos_dataset;
  ModelConfig arch;
  StageConfig s1 = StageConfig::defaults(1);
  StageConfig s2 = StageConfig::defaults(2);
  StageConfig s3 = StageConfig::defaults(3);
  DatagenOptions eval_opt;
  int episodes_per_seed = 25;
  std::vector<std::uint64_t> eval_seeds = {1, 2, 3};
  std::string out_dir;
  bool resume = true;  // reuse checkpoints already present in out_dir
};

struct ArmResult {
  std::string name;
  double mean = 0.0, stddev = 0.0;
  std::vector<double> per_seed;
  std::string checkpoint;
};

struct AblationReport {
  std::vector<ArmResult> arms;

  const ArmResult& arm(const std::string& name) const {
    for (const auto& a : arms)
      if (a.name == name) return a;
    throw std::out_of_range("no such ablation arm: " + name);
  }
  json to_json() const {
    json out = json::array();
    for (const auto& a : arms)
      out.push_back(json{{"arm", a.name},
                         {"mean", a.mean},
                         {"stddev", a.stddev},
                         {"per_seed", a.per_seed},
                         {"checkpoint", a.checkpoint}});
    return out;
  }
};

template <class S>
std::string train_or_resume(const StageConfig& sc, const ModelConfig& arch,
                            const std::string& dir, bool resume) {
  std::string final_path = dir + "/checkpoint_final.a4rc";
  if (resume && std::filesystem::exists(final_path)) return final_path;
  TrainResult<S> r = train_stage<S>(sc, arch, dir);
  return r.final_path;
}

// Trains the four stage arms under identical budgets and seeds and evaluates
// each on an identical rollout grid.
template <class S>
AblationReport ablation_suite(const AblationConfig& cfg, const GantryRig& rig) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  // shared prefixes
  StageConfig s1 = cfg.s1;
  s1.dataset_path = cfg.human_dataset;
  std::string ck_s1 = train_or_resume<S>(s1, cfg.arch, cfg.out_dir + "/stage1", cfg.resume);

  StageConfig s2a = cfg.s2;
  s2a.dataset_path = cfg.robot_tracks_dataset;
  s2a.init_checkpoint = ck_s1;
  std::string ck_s12 = train_or_resume<S>(s2a, cfg.arch, cfg.out_dir + "/stage2_from1", cfg.resume);

  StageConfig s2b = cfg.s2;
  s2b.dataset_path = cfg.robot_tracks_dataset;
  s2b.from_scratch = true;
  std::string ck_s2 = train_or_resume<S>(s2b, cfg.arch, cfg.out_dir + "/stage2_scratch", cfg.resume);

  NormalizationSpec nspec = read_manifest(cfg.robot_demos_dataset).norm;

  AblationReport report;
  std::vector<std::vector<std::uint64_t>> seed_lists;
  for (const AblationArm& arm : ablation_arms()) {
    StageConfig s3 = cfg.s3;
    s3.dataset_path = cfg.robot_demos_dataset;
    if (arm.use_stage1 && arm.use_stage2)
      s3.init_checkpoint = ck_s12;
    else if (arm.use_stage1)
      s3.init_checkpoint = ck_s1;
    else if (arm.use_stage2)
      s3.init_checkpoint = ck_s2;
    else
      s3.from_scratch = true;
    std::string dir = cfg.out_dir + "/arm_" + arm.name;
    std::string ck = train_or_resume<S>(s3, cfg.arch, dir, cfg.resume);

    Checkpoint<S> loaded = load_checkpoint<S>(ck);
    GridResult gr = rollout_grid(loaded.params, nspec, cfg.eval_opt, rig,
                                 cfg.episodes_per_seed, cfg.eval_seeds);
    seed_lists.push_back(gr.episode_seeds);
    ArmResult ar;
    ar.name = arm.name;
    ar.mean = gr.mean;
    ar.stddev = gr.stddev;
    ar.per_seed = gr.per_seed;
    ar.checkpoint = ck;
    report.arms.push_back(std::move(ar));
  }
  for (std::size_t i = 1; i < seed_lists.size(); ++i)
    if (seed_lists[i] != seed_lists[0])
      throw std::logic_error("ablation arms evaluated on different episode lists");
  return report;
}

}  // namespace trackctl
