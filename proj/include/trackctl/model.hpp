#pragma once

// The auto-regressive sequence model: frozen word-embedding language path
// with a learnable projection, depth-raster patch encoder, point/state input
// perceptrons, attention pooling of patch tokens by the input query,
// optional two-view fusion, a pre-norm causal transformer over the
// interleaved (language, observation, prediction) token layout, and a
// two-layer decoder trained with a masked L1 objective.

#include "trackctl/nn.hpp"
#include "trackctl/window.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace trackctl {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int context = 16;  // C, timesteps
  int grid = 16;     // g
  int views = 1;
  int horizon = 16;  // K, predicted states (control stage)
  int vocab = 64;
  int patch = 4;
  int raster_w = 32, raster_h = 32;
  ModelStage stage = ModelStage::track;

  int n_points() const { return grid * grid; }
  int in_dim() const { return stage == ModelStage::track ? n_points() * 3 : 7; }
  int target_dim() const { return in_dim(); }
  int out_dim() const { return stage == ModelStage::track ? n_points() * 3 : horizon * 7; }
  int patch_dim() const { return patch * patch; }
  int n_patches() const { return (raster_w / patch) * (raster_h / patch); }
  int max_tokens() const { return 3 * context; }
  int ffn_dim() const { return 4 * d_model; }

  void validate() const {
    if (d_model < 2 || d_model % n_heads != 0)
      throw std::invalid_argument("d_model must be divisible by n_heads");
    if (views != 1 && views != 2) throw std::invalid_argument("views must be 1 or 2");
    if (views == 2 && d_model % 2 != 0)
      throw std::invalid_argument("two-view fusion needs an even d_model");
    if (context < 1 || horizon < 1 || grid < 2 || vocab < 1)
      throw std::invalid_argument("context/horizon/grid/vocab out of range");
    if (raster_w % patch != 0 || raster_h % patch != 0)
      throw std::invalid_argument("raster resolution must be a multiple of the patch size");
  }

  json to_json() const {
    return json{{"d_model", d_model},   {"n_layers", n_layers}, {"n_heads", n_heads},
                {"context", context},   {"grid", grid},         {"views", views},
                {"horizon", horizon},   {"vocab", vocab},       {"patch", patch},
                {"raster_w", raster_w}, {"raster_h", raster_h}, {"stage", to_string(stage)}};
  }
  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.context = j.at("context").get<int>();
    c.grid = j.at("grid").get<int>();
    c.views = j.at("views").get<int>();
    c.horizon = j.at("horizon").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.patch = j.at("patch").get<int>();
    c.raster_w = j.at("raster_w").get<int>();
    c.raster_h = j.at("raster_h").get<int>();
    c.stage = model_stage_from_string(j.at("stage").get<std::string>());
    return c;
  }
  bool operator==(const ModelConfig& o) const { return to_json() == o.to_json(); }
};

template <class S>
struct TransformerBlock {
  Mat<S> ln1_g, ln1_b, qkv_w, qkv_b, ao_w, ao_b;
  Mat<S> ln2_g, ln2_b, f1_w, f1_b, f2_w, f2_b;
};

template <class S>
struct Parameters {
  ModelConfig cfg;

  Mat<S> lang_table;            // frozen
  Mat<S> lang_proj_w, lang_proj_b;
  Mat<S> patch_w, patch_b, patch_pos;
  Mat<S> in_w1, in_b1, in_w2, in_b2;      // point/state input perceptron
  Mat<S> tgt_w1, tgt_b1, tgt_w2, tgt_b2;  // target (next-step) perceptron
  Mat<S> pool_wq, pool_bq, pool_wk, pool_bk, pool_wv, pool_bv, pool_wo, pool_bo;
  Mat<S> view_w1, view_b1, view_w2, view_b2;  // views == 2 only
  Mat<S> pos;                                 // [3C, d]
  std::vector<TransformerBlock<S>> blocks;
  Mat<S> lnf_g, lnf_b;
  Mat<S> dec_w1, dec_b1, dec_w2, dec_b2;

  explicit Parameters(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    const int d = c.d_model;
    lang_table.setZero(c.vocab, d);
    lang_proj_w.setZero(d, d);
    lang_proj_b.setZero(1, d);
    patch_w.setZero(c.patch_dim(), d);
    patch_b.setZero(1, d);
    patch_pos.setZero(c.n_patches(), d);
    in_w1.setZero(c.in_dim(), d);
    in_b1.setZero(1, d);
    in_w2.setZero(d, d);
    in_b2.setZero(1, d);
    tgt_w1.setZero(c.target_dim(), d);
    tgt_b1.setZero(1, d);
    tgt_w2.setZero(d, d);
    tgt_b2.setZero(1, d);
    for (Mat<S>* m : {&pool_wq, &pool_wk, &pool_wv, &pool_wo}) m->setZero(d, d);
    for (Mat<S>* m : {&pool_bq, &pool_bk, &pool_bv, &pool_bo}) m->setZero(1, d);
    if (c.views == 2) {
      view_w1.setZero(d, d / 2);
      view_b1.setZero(1, d / 2);
      view_w2.setZero(d, d / 2);
      view_b2.setZero(1, d / 2);
    }
    pos.setZero(c.max_tokens(), d);
    blocks.resize(std::size_t(c.n_layers));
    for (auto& b : blocks) {
      b.ln1_g.setZero(1, d);
      b.ln1_b.setZero(1, d);
      b.qkv_w.setZero(d, 3 * d);
      b.qkv_b.setZero(1, 3 * d);
      b.ao_w.setZero(d, d);
      b.ao_b.setZero(1, d);
      b.ln2_g.setZero(1, d);
      b.ln2_b.setZero(1, d);
      b.f1_w.setZero(d, c.ffn_dim());
      b.f1_b.setZero(1, c.ffn_dim());
      b.f2_w.setZero(c.ffn_dim(), d);
      b.f2_b.setZero(1, d);
    }
    lnf_g.setZero(1, d);
    lnf_b.setZero(1, d);
    dec_w1.setZero(d, d);
    dec_b1.setZero(1, d);
    dec_w2.setZero(d, c.out_dim());
    dec_b2.setZero(1, c.out_dim());
  }

  // Stable visiting order defines the checkpoint layout, the optimizer slot
  // order, and the gradient-buffer layout.
  template <class F>
  void for_each(F&& f) {
    f("lang_table", lang_table, /*frozen=*/true);
    f("lang_proj_w", lang_proj_w, false);
    f("lang_proj_b", lang_proj_b, false);
    f("patch_w", patch_w, false);
    f("patch_b", patch_b, false);
    f("patch_pos", patch_pos, false);
    f("in_w1", in_w1, false);
    f("in_b1", in_b1, false);
    f("in_w2", in_w2, false);
    f("in_b2", in_b2, false);
    f("tgt_w1", tgt_w1, false);
    f("tgt_b1", tgt_b1, false);
    f("tgt_w2", tgt_w2, false);
    f("tgt_b2", tgt_b2, false);
    f("pool_wq", pool_wq, false);
    f("pool_bq", pool_bq, false);
    f("pool_wk", pool_wk, false);
    f("pool_bk", pool_bk, false);
    f("pool_wv", pool_wv, false);
    f("pool_bv", pool_bv, false);
    f("pool_wo", pool_wo, false);
    f("pool_bo", pool_bo, false);
    if (cfg.views == 2) {
      f("view_w1", view_w1, false);
      f("view_b1", view_b1, false);
      f("view_w2", view_w2, false);
      f("view_b2", view_b2, false);
    }
    f("pos", pos, false);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      auto& b = blocks[l];
      std::string p = "block" + std::to_string(l) + ".";
      f(p + "ln1_g", b.ln1_g, false);
      f(p + "ln1_b", b.ln1_b, false);
      f(p + "qkv_w", b.qkv_w, false);
      f(p + "qkv_b", b.qkv_b, false);
      f(p + "ao_w", b.ao_w, false);
      f(p + "ao_b", b.ao_b, false);
      f(p + "ln2_g", b.ln2_g, false);
      f(p + "ln2_b", b.ln2_b, false);
      f(p + "f1_w", b.f1_w, false);
      f(p + "f1_b", b.f1_b, false);
      f(p + "f2_w", b.f2_w, false);
      f(p + "f2_b", b.f2_b, false);
    }
    f("lnf_g", lnf_g, false);
    f("lnf_b", lnf_b, false);
    f("dec_w1", dec_w1, false);
    f("dec_b1", dec_b1, false);
    f("dec_w2", dec_w2, false);
    f("dec_b2", dec_b2, false);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<Parameters*>(this)->for_each(
        [&](const std::string& n, Mat<S>& m, bool frozen) { f(n, std::as_const(m), frozen); });
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Mat<S>& m, bool) { n += std::size_t(m.size()); });
    return n;
  }

  void init(std::uint64_t seed) {
    Rng rng(sub_seed(seed, 0x1417u));
    auto fill = [&](Mat<S>& m) {
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = S(rng.normal() * 0.02);
    };
    fill(lang_table);  // frozen random stand-in for a pretrained text encoder
    for (Mat<S>* w : {&lang_proj_w, &patch_w, &patch_pos, &in_w1, &in_w2, &tgt_w1, &tgt_w2,
                      &pool_wq, &pool_wk, &pool_wv, &pool_wo, &pos, &dec_w1, &dec_w2})
      fill(*w);
    if (cfg.views == 2) {
      fill(view_w1);
      fill(view_w2);
    }
    for (auto& b : blocks) {
      fill(b.qkv_w);
      fill(b.ao_w);
      fill(b.f1_w);
      fill(b.f2_w);
      b.ln1_g.setOnes();
      b.ln2_g.setOnes();
    }
    lnf_g.setOnes();
  }
};

// Gradient buffer with the same member layout as Parameters.
template <class S>
struct Grads : Parameters<S> {
  explicit Grads(const ModelConfig& c) : Parameters<S>(c) {}
  void zero() {
    this->for_each([](const std::string&, Mat<S>& m, bool) { m.setZero(); });
  }
  void add(const Grads& other) {
    std::vector<const Mat<S>*> src;
    other.for_each([&](const std::string&, const Mat<S>& m, bool) { src.push_back(&m); });
    std::size_t i = 0;
    this->for_each([&](const std::string&, Mat<S>& m, bool) { m += *src[i++]; });
  }
};

}  // namespace trackctl
