#pragma once

// Default desk-scale scenes and procedural episode specs: object palettes,
// the verb/noun instruction vocabulary, and per-episode scene/task sampling
// for both regimes.

#include "trackctl/gantry.hpp"
#include "trackctl/scene.hpp"
#include "trackctl/sim.hpp"

#include <array>
#include <string>
#include <vector>

namespace trackctl {

inline WorkspaceBounds default_workspace() {
  return {{-0.30, -0.30, 0.0}, {0.30, 0.30, 0.48}};
}

inline CameraModel default_camera(int resolution = 32) {
  CameraModel cam;
  cam.width = cam.height = resolution;
  cam.fx = cam.fy = 36.0 * resolution / 32.0;
  cam.cx = cam.cy = resolution / 2.0;
  cam.pose = camera_look_at({0.02, -0.68, 0.48}, {0.0, 0.02, 0.05});
  return cam;
}

inline CameraModel default_side_camera(int resolution = 32) {
  CameraModel cam = default_camera(resolution);
  cam.pose = camera_look_at({0.70, -0.18, 0.42}, {0.0, 0.0, 0.08});
  return cam;
}

// 12 verbs x 8 nouns; each verb maps to one scripted task kind.
inline const std::vector<std::pair<std::string, TaskKind>>& verb_table() {
  static const std::vector<std::pair<std::string, TaskKind>> verbs = {
      {"pick", TaskKind::pick},       {"grab", TaskKind::pick},
      {"lift", TaskKind::pick},       {"stack", TaskKind::stack},
      {"put", TaskKind::stack},       {"unstack", TaskKind::destack},
      {"shift", TaskKind::destack},   {"place", TaskKind::pick_place},
      {"drop", TaskKind::pick_place}, {"push", TaskKind::push},
      {"press", TaskKind::push},      {"wave", TaskKind::free_motion},
  };
  return verbs;
}

inline std::string verb_for_kind(TaskKind kind, Rng& rng) {
  std::vector<std::string> candidates;
  for (const auto& [verb, k] : verb_table())
    if (k == kind) candidates.push_back(verb);
  return candidates[std::size_t(rng.uniform_int(0, std::int64_t(candidates.size()) - 1))];
}

inline const std::array<std::string, 8>& noun_table() {
  static const std::array<std::string, 8> nouns = {"cube", "block", "ball",  "box",
                                                   "toy",  "tray",  "button", "hand"};
  return nouns;
}

inline const std::array<std::string, 8>& color_table() {
  static const std::array<std::string, 8> colors = {"red",  "green",  "blue",   "yellow",
                                                    "cyan", "purple", "orange", "white"};
  return colors;
}

// Canonical instruction vocabulary shared by every training stage, so token
// ids mean the same word no matter which dataset a window came from.
inline const std::vector<std::string>& global_vocab() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v = {"<unk>"};
    for (const auto& [verb, kind] : verb_table()) v.push_back(verb);
    for (const auto& n : noun_table()) v.push_back(n);
    for (const auto& c : color_table()) v.push_back(c);
    return v;
  }();
  return vocab;
}

inline ObjectSpec object_for_noun(const std::string& noun, const std::string& color) {
  ObjectSpec o;
  o.label = color + " " + noun;
  if (noun == "cube") {
    o.half_extents = {0.025, 0.025, 0.025};
  } else if (noun == "block") {
    o.half_extents = {0.028, 0.018, 0.018};
  } else if (noun == "box") {
    o.half_extents = {0.030, 0.030, 0.024};
  } else if (noun == "toy") {
    o.half_extents = {0.017, 0.013, 0.015};
  } else if (noun == "ball") {
    o.kind = ShapeKind::sphere;
    o.radius = 0.021;
  } else if (noun == "tray") {
    o.half_extents = {0.065, 0.065, 0.010};
    o.is_container = true;
  } else if (noun == "button") {
    o.half_extents = {0.030, 0.030, 0.0125};
    o.is_button = true;
  } else {
    throw std::invalid_argument("no object shape for noun '" + noun + "'");
  }
  return o;
}

// A scene plus task for one procedurally generated episode. Object nouns are
// unique within a scene so a two-word instruction is unambiguous.
struct EpisodeSpec {
  SceneSpec scene;
  TaskScript task;
};

struct DatagenOptions {
  Regime regime = Regime::robot;
  std::vector<TaskKind> kinds = {TaskKind::pick};
  int resolution = 32;
  int views = 1;
  int min_distractors = 0;
  int max_distractors = 0;
  double max_depth = 2.5;
  std::string target_noun;  // fix the target noun ("" = sample per episode)
  std::string verb;         // fix the instruction verb ("" = sample)
};

inline EpisodeSpec make_episode_spec(const DatagenOptions& opt, const GantryRig& rig,
                                     std::uint64_t seed) {
  Rng rng(sub_seed(seed, 0xdadau));
  EpisodeSpec es;
  SceneSpec& scene = es.scene;
  scene.regime = opt.regime;
  scene.workspace = default_workspace();
  scene.max_depth = opt.max_depth;
  scene.cameras.push_back(default_camera(opt.resolution));
  if (opt.views == 2) scene.cameras.push_back(default_side_camera(opt.resolution));
  if (opt.regime == Regime::robot) {
    scene.arm = rig.model;
    scene.arm_visual = rig.visual;
    scene.decor = gantry_decor(scene.workspace, rig.bridge_z);
  }

  TaskKind kind = opt.kinds[std::size_t(rng.uniform_int(0, std::int64_t(opt.kinds.size()) - 1))];
  es.task.kind = kind;
  es.task.waypoint_seed = sub_seed(seed, 0x5c51u);

  std::vector<std::string> nouns;  // nouns still available for this scene
  for (const auto& n : noun_table())
    if (n != "hand") nouns.push_back(n);
  rng.shuffle(nouns);
  std::vector<std::string> colors(color_table().begin(), color_table().end());
  rng.shuffle(colors);

  auto take_noun = [&](auto&& pred) -> std::string {
    for (std::size_t i = 0; i < nouns.size(); ++i) {
      if (pred(nouns[i])) {
        std::string n = nouns[i];
        nouns.erase(nouns.begin() + std::ptrdiff_t(i));
        return n;
      }
    }
    throw std::logic_error("noun palette exhausted");
  };
  auto take_target_noun = [&](auto&& pred) -> std::string {
    if (!opt.target_noun.empty())
      return take_noun([&](const std::string& n) { return n == opt.target_noun; });
    return take_noun(pred);
  };
  auto is_graspable = [](const std::string& n) { return n != "tray" && n != "button"; };
  auto add_object = [&](const std::string& noun) {
    std::string color = colors[std::size_t(scene.objects.size()) % colors.size()];
    ObjectSpec o = object_for_noun(noun, color);
    o.init_pose = kin::RigidTransform::translation(
        {0.0, 0.0, scene.table_height + o.rest_half_height()});
    scene.objects.push_back(o);
    return o.label;
  };

  std::string verb = opt.verb.empty() ? verb_for_kind(kind, rng) : opt.verb;
  std::string target_noun;
  switch (kind) {
    case TaskKind::pick:
      target_noun = take_target_noun(is_graspable);
      es.task.target_label = add_object(target_noun);
      break;
    case TaskKind::stack:
    case TaskKind::destack: {
      target_noun = take_target_noun(
          [](const std::string& n) { return n == "cube" || n == "block"; });
      std::string base_noun = take_noun(is_graspable);
      es.task.target_label = add_object(target_noun);
      es.task.second_label = add_object(base_noun);
      break;
    }
    case TaskKind::pick_place: {
      target_noun =
          take_target_noun([&](const std::string& n) { return is_graspable(n) && n != "box"; });
      es.task.target_label = add_object(target_noun);
      es.task.second_label = add_object(take_noun([](const std::string& n) { return n == "tray"; }));
      break;
    }
    case TaskKind::push: {
      target_noun = take_noun([](const std::string& n) { return n == "button"; });
      es.task.target_label = add_object(target_noun);
      // second button shares the noun but not the color
      ObjectSpec b2 = object_for_noun("button", colors[(scene.objects.size() + 3) % colors.size()]);
      b2.init_pose = kin::RigidTransform::translation({0.1, 0.1, b2.rest_half_height()});
      scene.objects.push_back(b2);
      es.task.second_label = b2.label;
      break;
    }
    case TaskKind::free_motion:
      target_noun = "hand";
      break;
  }

  int extra = int(rng.uniform_int(opt.min_distractors, opt.max_distractors));
  for (int i = 0; i < extra && !nouns.empty(); ++i) {
    std::string n = take_noun(is_graspable);
    std::string label = add_object(n);
    if (i == 0) es.task.distractor_label = label;
  }

  es.task.instruction = verb + " " + target_noun;
  return es;
}

}  // namespace trackctl
