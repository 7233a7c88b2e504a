#pragma once

// AdamW with decoupled weight decay and bias correction, plus global-norm
// gradient clipping. Frozen tensors are never touched.

#include "trackctl/model.hpp"

namespace trackctl {

struct AdamWConfig {
  double lr = 5e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct AdamWState {
  std::vector<Mat<S>> m, v;
  std::int64_t step = 0;

  template <class P>
  void init(const P& params) {
    m.clear();
    v.clear();
    params.for_each([&](const std::string&, const Mat<S>& t, bool) {
      m.push_back(Mat<S>::Zero(t.rows(), t.cols()));
      v.push_back(Mat<S>::Zero(t.rows(), t.cols()));
    });
  }
};

// Returns the pre-clip global gradient norm; scales grads in place when the
// norm exceeds max_norm.
template <class S>
double clip_gradients(Grads<S>& g, double max_norm) {
  double sq = 0.0;
  g.for_each([&](const std::string&, const Mat<S>& m, bool frozen) {
    if (!frozen) sq += double(m.squaredNorm());
  });
  double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    S scale = S(max_norm / norm);
    g.for_each([&](const std::string&, Mat<S>& m, bool frozen) {
      if (!frozen) m *= scale;
    });
  }
  return norm;
}

template <class S>
void adamw_step(Parameters<S>& params, const Grads<S>& grads, AdamWState<S>& st,
                const AdamWConfig& cfg) {
  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.step));

  std::vector<const Mat<S>*> gs;
  grads.for_each([&](const std::string&, const Mat<S>& m, bool) { gs.push_back(&m); });

  std::size_t i = 0;
  params.for_each([&](const std::string& name, Mat<S>& t, bool frozen) {
    const Mat<S>& g = *gs[i];
    Mat<S>& m = st.m[i];
    Mat<S>& v = st.v[i];
    ++i;
    if (frozen) return;
    if (!g.allFinite())
      throw std::runtime_error("non-finite gradient in tensor '" + name + "'");
    m = S(cfg.beta1) * m + S(1.0 - cfg.beta1) * g;
    v = S(cfg.beta2) * v + S(1.0 - cfg.beta2) * g.cwiseProduct(g);
    auto mhat = (m.array() / S(bc1));
    auto vhat = (v.array() / S(bc2));
    t.array() -= S(cfg.lr) * (mhat / (vhat.sqrt() + S(cfg.eps)) + S(cfg.weight_decay) * t.array());
  });
}

}  // namespace trackctl
