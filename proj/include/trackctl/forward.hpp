#pragma once

// Forward and backward passes over one context window. The token sequence
// interleaves [language, observation, prediction-input] per timestep; the
// prediction latent for timestep t is read at the observation position, so
// the loss depends only on observation-row latents.

#include "trackctl/model.hpp"

namespace trackctl {

// ---- encoders ---------------------------------------------------------------

template <class S>
struct LangCache {
  std::vector<int> ids;
  Mat<S> mean;  // [1, d]
};

template <class S>
Mat<S> encode_language(const Parameters<S>& p, const std::vector<int>& ids, LangCache<S>* cache) {
  Mat<S> mean = Mat<S>::Zero(1, p.cfg.d_model);
  for (int id : ids) {
    int safe = (id >= 0 && id < p.cfg.vocab) ? id : 0;  // unknown -> reserved <unk>
    mean.row(0) += p.lang_table.row(safe);
  }
  if (!ids.empty()) mean /= S(double(ids.size()));
  if (cache) {
    cache->ids = ids;
    cache->mean = mean;
  }
  return nn::linear(mean, p.lang_proj_w, p.lang_proj_b);
}

template <class S>
void encode_language_backward(const Parameters<S>& p, const LangCache<S>& c, const Mat<S>& dz,
                              Grads<S>& g) {
  // the embedding table is frozen: no gradient flows into it
  nn::linear_backward(c.mean, p.lang_proj_w, dz, g.lang_proj_w, g.lang_proj_b);
}

// Flatten one view's raster into [n_patches, patch*patch] rows.
template <class S>
Mat<S> extract_patches(const ModelConfig& cfg, const Eigen::Ref<const Mat<S>>& depth_row,
                       int view) {
  const int W = cfg.raster_w, H = cfg.raster_h, P = cfg.patch;
  const int mw = W / P;
  Mat<S> out(cfg.n_patches(), cfg.patch_dim());
  const int base = view * W * H;
  for (int pr = 0; pr < H / P; ++pr)
    for (int pc = 0; pc < mw; ++pc) {
      int m = pr * mw + pc;
      int k = 0;
      for (int dy = 0; dy < P; ++dy)
        for (int dx = 0; dx < P; ++dx, ++k)
          out(m, k) = depth_row(0, base + (pr * P + dy) * W + (pc * P + dx));
    }
  return out;
}

// Patch tokens before the positional embedding is added.
template <class S>
Mat<S> patch_project(const Parameters<S>& p, const Mat<S>& patches) {
  return nn::linear(patches, p.patch_w, p.patch_b);
}

template <class S>
Mat<S> encode_image(const Parameters<S>& p, const Mat<S>& patches) {
  return patch_project(p, patches) + p.patch_pos;
}

template <class S>
struct MlpCache {
  Mat<S> x, h1pre, h1;
};

template <class S>
Mat<S> mlp2_forward(const Mat<S>& x, const Mat<S>& w1, const Mat<S>& b1, const Mat<S>& w2,
                    const Mat<S>& b2, MlpCache<S>& c) {
  c.x = x;
  c.h1pre = nn::linear(x, w1, b1);
  c.h1 = nn::gelu(c.h1pre);
  return nn::linear(c.h1, w2, b2);
}

template <class S>
Mat<S> mlp2_backward(const MlpCache<S>& c, const Mat<S>& w1, const Mat<S>& w2, const Mat<S>& dy,
                     Mat<S>& dw1, Mat<S>& db1, Mat<S>& dw2, Mat<S>& db2) {
  Mat<S> dh1 = nn::linear_backward(c.h1, w2, dy, dw2, db2);
  Mat<S> dh1pre = nn::gelu_backward(c.h1pre, dh1);
  return nn::linear_backward(c.x, w1, dh1pre, dw1, db1);
}

template <class S>
Mat<S> encode_points(const Parameters<S>& p, const Mat<S>& x, MlpCache<S>& c) {
  if (!x.allFinite()) throw std::invalid_argument("non-finite input to the point/state encoder");
  return mlp2_forward(x, p.in_w1, p.in_b1, p.in_w2, p.in_b2, c);
}

template <class S>
Mat<S> encode_target(const Parameters<S>& p, const Mat<S>& x, MlpCache<S>& c) {
  return mlp2_forward(x, p.tgt_w1, p.tgt_b1, p.tgt_w2, p.tgt_b2, c);
}

template <class S>
Mat<S> attention_pool(const Parameters<S>& p, const Mat<S>& query, const Mat<S>& tokens,
                      nn::PoolCache<S>& c) {
  return nn::attention_pool(query, tokens, p.pool_wq, p.pool_bq, p.pool_wk, p.pool_bk, p.pool_wv,
                            p.pool_bv, p.pool_wo, p.pool_bo, p.cfg.n_heads, c);
}

// Two-view fusion: each observation token is projected to half the hidden
// dimension and the halves are concatenated.
template <class S>
Mat<S> fuse_views(const Parameters<S>& p, const Mat<S>& o1, const Mat<S>& o2) {
  if (p.cfg.views != 2) throw std::logic_error("fuse_views requires a two-view model");
  Mat<S> z(1, p.cfg.d_model);
  z.block(0, 0, 1, p.cfg.d_model / 2) = nn::linear(o1, p.view_w1, p.view_b1);
  z.block(0, p.cfg.d_model / 2, 1, p.cfg.d_model / 2) = nn::linear(o2, p.view_w2, p.view_b2);
  return z;
}

// ---- transformer ------------------------------------------------------------

template <class S>
struct SeqCache {
  Mat<S> s0;  // [L, d] token rows with positional embedding
  std::vector<nn::LayerNormCache<S>> ln1, ln2;
  std::vector<nn::AttentionCache<S>> attn;
  std::vector<Mat<S>> x2;       // post-attention residual
  std::vector<Mat<S>> ln2_out;  // FFN input
  std::vector<Mat<S>> f1pre, f1act;
  nn::LayerNormCache<S> lnf;
  Mat<S> h;  // [L, d] final latents
};

// Interleave [z_l, z_obs_t, z_teacher_t] per timestep (the same language
// token repeated), apply the causal transformer, and return the full latent
// matrix. Prediction latents live at rows 3t+1.
template <class S>
Mat<S> forward_sequence(const Parameters<S>& p, const Mat<S>& z_l, const Mat<S>& z_obs,
                        const Mat<S>& teacher, SeqCache<S>& c, bool causal = true) {
  const ModelConfig& cfg = p.cfg;
  const int Tw = int(z_obs.rows());
  const int L = 3 * Tw;
  if (L > cfg.max_tokens())
    throw std::invalid_argument("sequence longer than 3*C tokens");
  if (teacher.rows() != Tw) throw std::invalid_argument("teacher/observation row mismatch");

  c.s0.resize(L, cfg.d_model);
  for (int t = 0; t < Tw; ++t) {
    c.s0.row(3 * t + 0) = z_l.row(0);
    c.s0.row(3 * t + 1) = z_obs.row(t);
    c.s0.row(3 * t + 2) = teacher.row(t);
  }
  c.s0 += p.pos.topRows(L);

  c.ln1.resize(std::size_t(cfg.n_layers));
  c.ln2.resize(std::size_t(cfg.n_layers));
  c.attn.resize(std::size_t(cfg.n_layers));
  c.x2.resize(std::size_t(cfg.n_layers));
  c.ln2_out.resize(std::size_t(cfg.n_layers));
  c.f1pre.resize(std::size_t(cfg.n_layers));
  c.f1act.resize(std::size_t(cfg.n_layers));

  Mat<S> x = c.s0;
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& b = p.blocks[std::size_t(l)];
    Mat<S> ln1_out = nn::layernorm(x, b.ln1_g, b.ln1_b, c.ln1[std::size_t(l)]);
    Mat<S> a = nn::self_attention(ln1_out, b.qkv_w, b.qkv_b, b.ao_w, b.ao_b, cfg.n_heads, causal,
                                  c.attn[std::size_t(l)]);
    c.x2[std::size_t(l)] = x + a;
    c.ln2_out[std::size_t(l)] =
        nn::layernorm(c.x2[std::size_t(l)], b.ln2_g, b.ln2_b, c.ln2[std::size_t(l)]);
    c.f1pre[std::size_t(l)] = nn::linear(c.ln2_out[std::size_t(l)], b.f1_w, b.f1_b);
    c.f1act[std::size_t(l)] = nn::gelu(c.f1pre[std::size_t(l)]);
    x = c.x2[std::size_t(l)] + nn::linear(c.f1act[std::size_t(l)], b.f2_w, b.f2_b);
  }
  c.h = nn::layernorm(x, p.lnf_g, p.lnf_b, c.lnf);
  return c.h;
}

// Backward through the transformer given dL/dh. Returns gradients for the
// interleaved inputs: (dz_l summed over its repeats, dz_obs, dteacher).
template <class S>
void backward_sequence(const Parameters<S>& p, const SeqCache<S>& c, const Mat<S>& dh,
                       Grads<S>& g, Mat<S>& dz_l, Mat<S>& dz_obs, Mat<S>& dteacher) {
  const ModelConfig& cfg = p.cfg;
  const int L = int(c.h.rows());
  const int Tw = L / 3;

  Mat<S> dx = nn::layernorm_backward(c.lnf, p.lnf_g, dh, g.lnf_g, g.lnf_b);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    auto& b = p.blocks[std::size_t(l)];
    auto& gb = g.blocks[std::size_t(l)];
    // FFN path
    Mat<S> df1act = nn::linear_backward(c.f1act[std::size_t(l)], b.f2_w, dx, gb.f2_w, gb.f2_b);
    Mat<S> df1pre = nn::gelu_backward(c.f1pre[std::size_t(l)], df1act);
    Mat<S> dln2_out =
        nn::linear_backward(c.ln2_out[std::size_t(l)], b.f1_w, df1pre, gb.f1_w, gb.f1_b);
    Mat<S> dx2 =
        dx + nn::layernorm_backward(c.ln2[std::size_t(l)], b.ln2_g, dln2_out, gb.ln2_g, gb.ln2_b);
    // attention path
    Mat<S> dln1_out = nn::self_attention_backward(c.attn[std::size_t(l)], b.qkv_w, b.ao_w, dx2,
                                                  cfg.n_heads, gb.qkv_w, gb.qkv_b, gb.ao_w,
                                                  gb.ao_b);
    dx = dx2 + nn::layernorm_backward(c.ln1[std::size_t(l)], b.ln1_g, dln1_out, gb.ln1_g,
                                      gb.ln1_b);
  }
  g.pos.topRows(L) += dx;
  dz_l = Mat<S>::Zero(1, cfg.d_model);
  dz_obs.resize(Tw, cfg.d_model);
  dteacher.resize(Tw, cfg.d_model);
  for (int t = 0; t < Tw; ++t) {
    dz_l.row(0) += dx.row(3 * t + 0);
    dz_obs.row(t) = dx.row(3 * t + 1);
    dteacher.row(t) = dx.row(3 * t + 2);
  }
}

// ---- decoder and loss -----------------------------------------------------

// Reads latents at the observation positions and decodes predictions.
template <class S>
Mat<S> obs_latents(const Mat<S>& h) {
  const int Tw = int(h.rows()) / 3;
  Mat<S> out(Tw, h.cols());
  for (int t = 0; t < Tw; ++t) out.row(t) = h.row(3 * t + 1);
  return out;
}

template <class S>
Mat<S> decode_prediction(const Parameters<S>& p, const Mat<S>& latents, MlpCache<S>& c) {
  return mlp2_forward(latents, p.dec_w1, p.dec_b1, p.dec_w2, p.dec_b2, c);
}

// Masked L1 objective. Track stage: mean over rows of (1/n) * |pred - gt|_1.
// Control stage: per valid horizon entry, the 7-dim L1 with wrap-aware
// residuals on the (normalized) Euler dimensions, averaged over valid
// entries.
template <class S>
S loss_l1(const Mat<S>& pred, const Mat<S>& target, const Mat<S>& mask, ModelStage stage,
          int n_points, Mat<S>* dpred = nullptr) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("loss shape mismatch");
  if (mask.size() == 0 || mask.maxCoeff() <= S(0)) throw std::invalid_argument("empty loss mask");
  if (dpred) dpred->setZero(pred.rows(), pred.cols());

  double total = 0.0;
  if (stage == ModelStage::track) {
    int rows = 0;
    for (Eigen::Index r = 0; r < pred.rows(); ++r)
      if (mask(r, 0) > S(0)) ++rows;
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
      if (mask(r, 0) <= S(0)) continue;
      for (Eigen::Index cidx = 0; cidx < pred.cols(); ++cidx) {
        S d = pred(r, cidx) - target(r, cidx);
        total += std::abs(double(d)) / n_points;
        if (dpred)
          (*dpred)(r, cidx) = (d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0))) / S(n_points * rows);
      }
    }
    return S(total / rows);
  }

  const int K = int(mask.cols());
  int valid = 0;
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (int k = 0; k < K; ++k)
      if (mask(r, k) > S(0)) ++valid;
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (int k = 0; k < K; ++k) {
      if (mask(r, k) <= S(0)) continue;
      for (int i = 0; i < 7; ++i) {
        Eigen::Index cidx = 7 * k + i;
        S d = pred(r, cidx) - target(r, cidx);
        bool wrap_dim = i >= 3 && i < 6;  // normalized angles have period 2
        double ad = std::abs(double(d));
        double sign = d > S(0) ? 1.0 : (d < S(0) ? -1.0 : 0.0);
        if (wrap_dim && 2.0 - ad < ad) {
          total += 2.0 - ad;
          if (dpred) (*dpred)(r, cidx) = S(-sign / valid);
        } else {
          total += ad;
          if (dpred) (*dpred)(r, cidx) = S(sign / valid);
        }
      }
    }
  }
  return S(total / valid);
}

// ---- full window ------------------------------------------------------------

template <class S>
struct WindowCache {
  LangCache<S> lang;
  Mat<S> z_l;
  std::vector<std::vector<Mat<S>>> patches;     // [Tw][view] [m, p*p]
  std::vector<std::vector<Mat<S>>> patch_tok;   // [m, d] with position added
  std::vector<std::vector<nn::PoolCache<S>>> pool;
  std::vector<std::vector<Mat<S>>> pooled;      // [1, d]
  std::vector<MlpCache<S>> in_mlp;
  std::vector<MlpCache<S>> tgt_mlp;
  Mat<S> z_obs;    // [Tw, d]
  Mat<S> teacher;  // [Tw, d]
  SeqCache<S> seq;
  Mat<S> latents;  // [Tw, d]
  MlpCache<S> dec;
  Mat<S> preds;  // [Tw, out_dim]
  S loss = S(0);
  Mat<S> dpreds;
};

template <class S>
S forward_window(const Parameters<S>& p, const ModelInput<S>& in, WindowCache<S>& c,
                 bool with_loss = true, bool causal = true) {
  const ModelConfig& cfg = p.cfg;
  const int Tw = in.timesteps;
  if (Tw < 1 || Tw > cfg.context)
    throw std::invalid_argument("window timesteps out of range");
  if (int(in.depth.cols()) != cfg.views * cfg.raster_w * cfg.raster_h)
    throw std::invalid_argument("raster shape mismatch");
  if (int(in.inputs.cols()) != cfg.in_dim())
    throw std::invalid_argument("input dimension mismatch");

  c.z_l = encode_language(p, in.token_ids, &c.lang);

  c.patches.assign(std::size_t(Tw), {});
  c.patch_tok.assign(std::size_t(Tw), {});
  c.pool.assign(std::size_t(Tw), {});
  c.pooled.assign(std::size_t(Tw), {});
  c.in_mlp.assign(std::size_t(Tw), {});
  c.tgt_mlp.assign(std::size_t(Tw), {});
  c.z_obs.resize(Tw, cfg.d_model);
  c.teacher.resize(Tw, cfg.d_model);

  for (int t = 0; t < Tw; ++t) {
    Mat<S> q = encode_points(p, Mat<S>(in.inputs.row(t)), c.in_mlp[std::size_t(t)]);
    c.patches[std::size_t(t)].resize(std::size_t(cfg.views));
    c.patch_tok[std::size_t(t)].resize(std::size_t(cfg.views));
    c.pool[std::size_t(t)].resize(std::size_t(cfg.views));
    c.pooled[std::size_t(t)].resize(std::size_t(cfg.views));
    for (int v = 0; v < cfg.views; ++v) {
      c.patches[std::size_t(t)][std::size_t(v)] =
          extract_patches<S>(cfg, in.depth.row(t), v);
      c.patch_tok[std::size_t(t)][std::size_t(v)] =
          encode_image(p, c.patches[std::size_t(t)][std::size_t(v)]);
      c.pooled[std::size_t(t)][std::size_t(v)] =
          attention_pool(p, q, c.patch_tok[std::size_t(t)][std::size_t(v)],
                         c.pool[std::size_t(t)][std::size_t(v)]);
    }
    if (cfg.views == 1)
      c.z_obs.row(t) = c.pooled[std::size_t(t)][0].row(0);
    else
      c.z_obs.row(t) =
          fuse_views(p, c.pooled[std::size_t(t)][0], c.pooled[std::size_t(t)][1]).row(0);
    c.teacher.row(t) =
        encode_target(p, Mat<S>(in.teacher.row(t)), c.tgt_mlp[std::size_t(t)]).row(0);
  }

  Mat<S> h = forward_sequence(p, c.z_l, c.z_obs, c.teacher, c.seq, causal);
  c.latents = obs_latents(h);
  c.preds = decode_prediction(p, c.latents, c.dec);
  if (with_loss) {
    c.loss = loss_l1(c.preds, in.target, in.mask, cfg.stage, cfg.n_points(), &c.dpreds);
    return c.loss;
  }
  return S(0);
}

template <class S>
void backward_window(const Parameters<S>& p, const ModelInput<S>& in, WindowCache<S>& c,
                     Grads<S>& g) {
  const ModelConfig& cfg = p.cfg;
  const int Tw = in.timesteps;

  Mat<S> dlatents =
      mlp2_backward(c.dec, p.dec_w1, p.dec_w2, c.dpreds, g.dec_w1, g.dec_b1, g.dec_w2, g.dec_b2);
  // loss reads only observation-position latents
  Mat<S> dh = Mat<S>::Zero(3 * Tw, cfg.d_model);
  for (int t = 0; t < Tw; ++t) dh.row(3 * t + 1) = dlatents.row(t);

  Mat<S> dz_l, dz_obs, dteacher;
  backward_sequence(p, c.seq, dh, g, dz_l, dz_obs, dteacher);

  for (int t = Tw - 1; t >= 0; --t) {
    mlp2_backward(c.tgt_mlp[std::size_t(t)], p.tgt_w1, p.tgt_w2, Mat<S>(dteacher.row(t)),
                  g.tgt_w1, g.tgt_b1, g.tgt_w2, g.tgt_b2);

    Mat<S> dq = Mat<S>::Zero(1, cfg.d_model);
    std::vector<Mat<S>> dpooled(std::size_t(cfg.views));
    if (cfg.views == 1) {
      dpooled[0] = dz_obs.row(t);
    } else {
      const int half = cfg.d_model / 2;
      Mat<S> d1 = dz_obs.block(t, 0, 1, half);
      Mat<S> d2 = dz_obs.block(t, half, 1, half);
      dpooled[0] = nn::linear_backward(c.pooled[std::size_t(t)][0], p.view_w1, d1, g.view_w1,
                                       g.view_b1);
      dpooled[1] = nn::linear_backward(c.pooled[std::size_t(t)][1], p.view_w2, d2, g.view_w2,
                                       g.view_b2);
    }
    for (int v = 0; v < cfg.views; ++v) {
      Mat<S> dtok = Mat<S>::Zero(cfg.n_patches(), cfg.d_model);
      nn::attention_pool_backward(c.pool[std::size_t(t)][std::size_t(v)], p.pool_wq, p.pool_wk,
                                  p.pool_wv, p.pool_wo, dpooled[std::size_t(v)], cfg.n_heads, dq,
                                  dtok, g.pool_wq, g.pool_bq, g.pool_wk, g.pool_bk, g.pool_wv,
                                  g.pool_bv, g.pool_wo, g.pool_bo);
      g.patch_pos += dtok;
      nn::linear_backward(c.patches[std::size_t(t)][std::size_t(v)], p.patch_w, dtok, g.patch_w,
                          g.patch_b);
    }
    mlp2_backward(c.in_mlp[std::size_t(t)], p.in_w1, p.in_w2, dq, g.in_w1, g.in_b1, g.in_w2,
                  g.in_b2);
  }
  encode_language_backward(p, c.lang, dz_l, g);
}

// ---- head swap for control fine-tuning ----------------------------------

struct SwapReport {
  std::vector<std::string> carried;
  std::vector<std::string> reinitialized;
};

// Carries the trunk (transformer, positions, language path, image encoder,
// pooling, view projections) bitwise; the input/target perceptrons and the
// decoder are replaced by freshly initialized state-shaped heads.
template <class S>
Parameters<S> swap_heads_for_control(const Parameters<S>& track, int horizon,
                                     std::uint64_t seed, SwapReport* report = nullptr) {
  if (track.cfg.stage != ModelStage::track)
    throw std::invalid_argument("head swap expects track-stage parameters");
  ModelConfig cfg = track.cfg;
  cfg.stage = ModelStage::control;
  cfg.horizon = horizon;
  Parameters<S> out(cfg);
  out.init(sub_seed(seed, 0x5eedu));

  auto is_head = [](const std::string& name) {
    return name.rfind("in_", 0) == 0 || name.rfind("tgt_", 0) == 0 || name.rfind("dec_", 0) == 0;
  };
  std::vector<std::pair<std::string, const Mat<S>*>> src;
  track.for_each([&](const std::string& n, const Mat<S>& m, bool) { src.emplace_back(n, &m); });
  std::size_t i = 0;
  out.for_each([&](const std::string& n, Mat<S>& m, bool) {
    if (src[i].first != n) throw std::logic_error("parameter order mismatch in head swap");
    if (is_head(n)) {
      if (report) report->reinitialized.push_back(n);
    } else {
      m = *src[i].second;
      if (report) report->carried.push_back(n);
    }
    ++i;
  });
  return out;
}

}  // namespace trackctl
