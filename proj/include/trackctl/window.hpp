#pragma once

// Context-window extraction: episodes -> model inputs with teacher-forcing
// targets. Track stages consume/emit point sets; the control stage consumes
// states and emits a K-step state horizon with a validity mask.

#include "trackctl/dataset.hpp"

namespace trackctl {

enum class ModelStage : std::uint8_t { track = 0, control = 1 };

inline const char* to_string(ModelStage s) {
  return s == ModelStage::track ? "track" : "control";
}
inline ModelStage model_stage_from_string(const std::string& s) {
  if (s == "track") return ModelStage::track;
  if (s == "control") return ModelStage::control;
  throw std::invalid_argument("unknown model stage: " + s);
}

template <class S>
struct ModelInput {
  std::vector<int> token_ids;
  int timesteps = 0;  // Tw <= C, contiguous
  Mat<S> depth;       // [Tw, views*H*W], scaled by 1/max_depth
  Mat<S> inputs;      // [Tw, n*3] or [Tw, 7], normalized
  Mat<S> teacher;     // [Tw, n*3] or [Tw, 7]: ground-truth next, normalized
  Mat<S> target;      // [Tw, n*3] or [Tw, K*7], normalized
  Mat<S> mask;        // [Tw, 1] or [Tw, K], 1 = valid target entry
};

// Normalized, flattened episode arrays; windows are row slices of these.
template <class S>
struct PreppedEpisode {
  std::vector<int> token_ids;
  Mat<S> depth;   // [T, views*H*W]
  Mat<S> points;  // [T, n*3]
  Mat<S> states;  // [T, 7]
  int length = 0;
};

template <class S>
PreppedEpisode<S> prep_episode(const Episode& ep, const NormalizationSpec& nspec,
                               const std::vector<std::string>& vocab) {
  PreppedEpisode<S> pe;
  pe.token_ids = tokenize(ep.instruction, vocab);
  pe.length = ep.length();
  const int raster = ep.raster_width * ep.raster_height;
  const int n3 = ep.n_points() * 3;
  pe.depth.resize(pe.length, ep.views * raster);
  pe.points.resize(pe.length, n3);
  pe.states.resize(pe.length, 7);
  for (int t = 0; t < pe.length; ++t) {
    const Frame& f = ep.frames[std::size_t(t)];
    for (int v = 0; v < ep.views; ++v)
      for (int i = 0; i < raster; ++i)
        pe.depth(t, v * raster + i) = S(double(f.depth[std::size_t(v)][std::size_t(i)]) /
                                        nspec.max_depth);
    Eigen::MatrixX3d pn = normalize_points(f.points.coords, nspec);
    for (int j = 0; j < ep.n_points(); ++j)
      for (int c = 0; c < 3; ++c) pe.points(t, 3 * j + c) = S(pn(j, c));
    Eigen::Matrix<double, 7, 1> sv = normalize_state(f.state, nspec);
    for (int i = 0; i < 7; ++i) pe.states(t, i) = S(sv[i]);
  }
  return pe;
}

template <class S>
ModelInput<S> window_from_prepped(const PreppedEpisode<S>& pe, int t, int C, ModelStage stage,
                                  int K) {
  const int T = pe.length;
  if (t < 0 || t >= T - 1) throw std::out_of_range("window anchor t must satisfy 0 <= t < T-1");
  if (C < 1) throw std::invalid_argument("context C must be >= 1");
  const int t0 = std::max(0, t - C + 1);
  const int Tw = t - t0 + 1;

  ModelInput<S> in;
  in.token_ids = pe.token_ids;
  in.timesteps = Tw;
  in.depth = pe.depth.middleRows(t0, Tw);
  if (stage == ModelStage::track) {
    in.inputs = pe.points.middleRows(t0, Tw);
    in.teacher = pe.points.middleRows(t0 + 1, Tw);
    in.target = in.teacher;
    in.mask = Mat<S>::Ones(Tw, 1);
  } else {
    if (K < 1) throw std::invalid_argument("horizon K must be >= 1");
    in.inputs = pe.states.middleRows(t0, Tw);
    in.teacher = pe.states.middleRows(t0 + 1, Tw);
    in.target = Mat<S>::Zero(Tw, K * 7);
    in.mask = Mat<S>::Zero(Tw, K);
    for (int r = 0; r < Tw; ++r) {
      int tau = t0 + r;
      for (int k = 0; k < K; ++k) {
        int idx = tau + 1 + k;
        if (idx > T - 1) break;  // zero-padded past the episode end
        in.target.block(r, 7 * k, 1, 7) = pe.states.row(idx);
        in.mask(r, k) = S(1);
      }
    }
  }
  return in;
}

template <class S>
ModelInput<S> window(const Episode& ep, int t, int C, ModelStage stage, int K,
                     const NormalizationSpec& nspec, const std::vector<std::string>& vocab) {
  return window_from_prepped(prep_episode<S>(ep, nspec, vocab), t, C, stage, K);
}

}  // namespace trackctl
