#include <doctest.h>

#include "trackctl/datagen.hpp"
#include "trackctl/forward.hpp"

using namespace trackctl;

namespace {

ModelConfig tiny_config(ModelStage stage = ModelStage::track, int views = 1) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context = 4;
  c.grid = 4;
  c.views = views;
  c.horizon = 4;
  c.vocab = 32;
  c.patch = 4;
  c.raster_w = 16;
  c.raster_h = 16;
  c.stage = stage;
  return c;
}

template <class S>
ModelInput<S> random_input(const ModelConfig& cfg, int Tw, std::uint64_t seed) {
  Rng rng(seed);
  ModelInput<S> in;
  in.token_ids = {1, 2};
  in.timesteps = Tw;
  auto fill = [&](Mat<S>& m, int r, int c) {
    m.resize(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = S(rng.uniform(-0.9, 0.9));
  };
  fill(in.depth, Tw, cfg.views * cfg.raster_w * cfg.raster_h);
  fill(in.inputs, Tw, cfg.in_dim());
  fill(in.teacher, Tw, cfg.target_dim());
  fill(in.target, Tw, cfg.out_dim());
  in.mask = cfg.stage == ModelStage::track ? Mat<S>::Ones(Tw, 1) : Mat<S>::Ones(Tw, cfg.horizon);
  return in;
}

}  // namespace

TEST_CASE("language encoder: empty instruction is the projection bias") {
  Parameters<double> p(tiny_config());
  p.init(3);
  Mat<double> z = encode_language(p, {}, static_cast<LangCache<double>*>(nullptr));
  CHECK(z == p.lang_proj_b);
  Mat<double> a = encode_language(p, {1, 5}, static_cast<LangCache<double>*>(nullptr));
  Mat<double> b = encode_language(p, {1, 5}, static_cast<LangCache<double>*>(nullptr));
  CHECK(a == b);
  // unknown ids fall back to the reserved <unk> row
  Mat<double> u1 = encode_language(p, {999}, static_cast<LangCache<double>*>(nullptr));
  Mat<double> u2 = encode_language(p, {0}, static_cast<LangCache<double>*>(nullptr));
  CHECK(u1 == u2);
}

TEST_CASE("image encoder: token arithmetic, constant rasters, locality") {
  ModelConfig c32 = tiny_config();
  c32.raster_w = c32.raster_h = 32;
  CHECK(c32.n_patches() == 64);  // 32x32 raster, patch 4

  Parameters<double> p(tiny_config());
  p.init(4);
  Mat<double> zero_raster = Mat<double>::Zero(1, 256);
  Mat<double> patches = extract_patches<double>(p.cfg, zero_raster, 0);
  Mat<double> pre = patch_project(p, patches);
  for (int m = 1; m < pre.rows(); ++m) CHECK(pre.row(m) == pre.row(0));

  // single-pixel perturbation touches exactly the covering patch token
  Mat<double> raster = zero_raster;
  raster(0, 3 * 16 + 9) = 1.0;  // pixel (9,3): patch row 0, col 2 -> index 2
  Mat<double> pre2 = patch_project(p, extract_patches<double>(p.cfg, raster, 0));
  int changed = 0;
  for (int m = 0; m < pre2.rows(); ++m)
    if (pre2.row(m) != pre.row(m)) {
      ++changed;
      CHECK(m == 2);
    }
  CHECK(changed == 1);
}

TEST_CASE("point encoder: bias path, flattening, Jacobian") {
  Parameters<double> p(tiny_config());
  p.init(5);
  MlpCache<double> c;
  Mat<double> zero = Mat<double>::Zero(1, p.cfg.in_dim());
  Mat<double> out = encode_points(p, zero, c);
  Mat<double> expect = nn::linear(nn::gelu(Mat<double>(p.in_b1)), p.in_w2, p.in_b2);
  CHECK((out - expect).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(6);
  Mat<double> x(1, p.cfg.in_dim());
  for (int j = 0; j < x.cols(); ++j) x(0, j) = rng.uniform(-1, 1);
  CHECK(encode_points(p, x, c) == encode_points(p, Mat<double>(x), c));

  Mat<double> nan = x;
  nan(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(encode_points(p, nan, c), std::invalid_argument);

  // central finite differences on a few coordinates
  const double h = 1e-6;
  Mat<double> y0 = encode_points(p, x, c);
  for (int probe = 0; probe < 5; ++probe) {
    int j = int(rng.uniform_int(0, x.cols() - 1));
    int i = int(rng.uniform_int(0, y0.cols() - 1));
    Mat<double> xp = x, xm = x;
    xp(0, j) += h;
    xm(0, j) -= h;
    double fd = (encode_points(p, xp, c)(0, i) - encode_points(p, xm, c)(0, i)) / (2 * h);
    // analytic: dy_i/dx_j = sum_k gelu'(h1pre_k) W1(j,k) W2(k,i)
    MlpCache<double> cc;
    encode_points(p, x, cc);
    double an = 0;
    for (int k = 0; k < p.cfg.d_model; ++k)
      an += nn::gelu_grad_scalar(cc.h1pre(0, k)) * p.in_w1(j, k) * p.in_w2(k, i);
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}) < 1e-4);
  }
}

TEST_CASE("attention pooling: uniform weights on identical tokens, simplex weights") {
  Parameters<double> p(tiny_config());
  p.init(7);
  Rng rng(8);
  const int m = p.cfg.n_patches();
  Mat<double> q(1, 16);
  for (int j = 0; j < 16; ++j) q(0, j) = rng.normal();

  Mat<double> common(1, 16);
  for (int j = 0; j < 16; ++j) common(0, j) = rng.normal();
  Mat<double> tokens = common.replicate(m, 1);
  nn::PoolCache<double> c;
  Mat<double> out = attention_pool(p, q, tokens, c);
  for (int h = 0; h < p.cfg.n_heads; ++h)
    for (int k = 0; k < m; ++k) CHECK(c.att(h, k) == doctest::Approx(1.0 / m).epsilon(1e-6));
  Mat<double> v_common = nn::linear(common, p.pool_wv, p.pool_bv);
  Mat<double> expect = nn::linear(v_common, p.pool_wo, p.pool_bo);
  CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    Mat<double> toks(m, 16);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < 16; ++j) toks(i, j) = rng.normal();
    attention_pool(p, q, toks, c);
    for (int h = 0; h < p.cfg.n_heads; ++h)
      CHECK(c.att.row(h).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("attention pooling: masking the strongest patch moves the output most") {
  Rng rng(9);
  double effect_max = 0, effect_min = 0;
  for (int draw = 0; draw < 100; ++draw) {
    Parameters<double> p(tiny_config());
    p.init(std::uint64_t(1000 + draw));
    const int m = p.cfg.n_patches();
    Mat<double> q(1, 16), tokens(m, 16);
    for (int j = 0; j < 16; ++j) q(0, j) = rng.normal();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < 16; ++j) tokens(i, j) = rng.normal();
    nn::PoolCache<double> c;
    Mat<double> base = attention_pool(p, q, tokens, c);
    Eigen::RowVectorXd mean_att = c.att.colwise().mean();
    int arg_max = 0, arg_min = 0;
    mean_att.maxCoeff(&arg_max);
    mean_att.minCoeff(&arg_min);
    auto masked_delta = [&](int drop) {
      Mat<double> sub(m - 1, 16);
      int r = 0;
      for (int i = 0; i < m; ++i)
        if (i != drop) sub.row(r++) = tokens.row(i);
      nn::PoolCache<double> cc;
      return (attention_pool(p, q, sub, cc) - base).norm();
    };
    effect_max += masked_delta(arg_max);
    effect_min += masked_delta(arg_min);
  }
  CHECK(effect_max / 100 > effect_min / 100);
}

TEST_CASE("two-view fusion halves the hidden dimension (768 -> 384)") {
  ModelConfig cfg = tiny_config(ModelStage::track, 2);
  cfg.d_model = 768;
  cfg.n_heads = 8;
  cfg.n_layers = 1;
  Parameters<float> p(cfg);
  CHECK(p.view_w1.rows() == 768);
  CHECK(p.view_w1.cols() == 384);
  p.init(11);
  Rng rng(12);
  Mat<float> o1(1, 768), o2(1, 768);
  for (int j = 0; j < 768; ++j) {
    o1(0, j) = float(rng.normal());
    o2(0, j) = float(rng.normal());
  }
  Mat<float> z = fuse_views(p, o1, o2);
  CHECK(z.cols() == 768);

  // zero second view -> second half is that projection's bias
  Mat<float> zero_view = Mat<float>::Zero(1, 768);
  Mat<float> z0 = fuse_views(p, o1, zero_view);
  CHECK(z0.block(0, 384, 1, 384) == p.view_b2);

  // perturbing view 1 changes only the first half
  Mat<float> o1b = o1;
  o1b(0, 100) += 1.0f;
  Mat<float> zb = fuse_views(p, o1b, o2);
  CHECK(zb.block(0, 384, 1, 384) == z.block(0, 384, 1, 384));
  CHECK(zb.block(0, 0, 1, 384) != z.block(0, 0, 1, 384));
}

TEST_CASE("sequence layout and causality") {
  ModelConfig cfg = tiny_config();
  Parameters<double> p(cfg);
  p.init(13);
  Rng rng(14);
  auto rand_mat = [&](int r, int c) {
    Mat<double> m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
  };
  Mat<double> z_l = rand_mat(1, 16);

  SeqCache<double> c1;
  Mat<double> h1 = forward_sequence(p, z_l, rand_mat(1, 16), rand_mat(1, 16), c1);
  CHECK(c1.s0.rows() == 3);
  CHECK(obs_latents(h1).rows() == 1);

  Mat<double> z_obs = rand_mat(3, 16), teacher = rand_mat(3, 16);
  SeqCache<double> ca, cb;
  Mat<double> ha = forward_sequence(p, z_l, z_obs, teacher, ca);
  Mat<double> perturbed = teacher;
  perturbed(1, 3) += 0.37;  // a uniform shift would sit in LayerNorm's null space
  Mat<double> hb = forward_sequence(p, z_l, z_obs, perturbed, cb);
  Mat<double> la = obs_latents(ha), lb = obs_latents(hb);
  CHECK(la.row(0) == lb.row(0));  // exact equality required
  CHECK(la.row(1) == lb.row(1));
  CHECK(la.row(2) != lb.row(2));

  // removing the causal mask must change something
  SeqCache<double> cc;
  Mat<double> hc = forward_sequence(p, z_l, z_obs, teacher, cc, /*causal=*/false);
  CHECK(ha != hc);

  CHECK_THROWS_AS(forward_sequence(p, z_l, rand_mat(5, 16), rand_mat(5, 16), cc),
                  std::invalid_argument);
}

TEST_CASE("decoder arity and loss values") {
  ModelConfig track = tiny_config();
  track.grid = 16;
  CHECK(track.out_dim() == 768);  // g=16 -> 256 points * 3
  ModelConfig control = tiny_config(ModelStage::control);
  control.horizon = 16;
  CHECK(control.out_dim() == 112);  // 16 states * 7

  // direct evaluations of the per-frame L1
  Mat<double> pred(1, 3), target(1, 3);
  pred << 0.1, -0.2, 0.3;
  target.setZero();
  Mat<double> mask = Mat<double>::Ones(1, 1);
  CHECK(loss_l1(pred, target, mask, ModelStage::track, 1) == doctest::Approx(0.6).epsilon(1e-12));

  Mat<double> pred2(1, 6), target2(1, 6);
  pred2 << 0.1, 0, 0, 0, 0.3, 0;
  target2.setZero();
  CHECK(loss_l1(pred2, target2, mask, ModelStage::track, 2) ==
        doctest::Approx(0.2).epsilon(1e-12));

  CHECK(loss_l1(pred, pred, mask, ModelStage::track, 1) == 0.0);
  Mat<double> zero_mask = Mat<double>::Zero(1, 1);
  CHECK_THROWS_AS(loss_l1(pred, target, zero_mask, ModelStage::track, 1),
                  std::invalid_argument);

  // wrap-aware residuals on normalized euler dimensions
  Mat<double> ps = Mat<double>::Zero(1, 7), ts = Mat<double>::Zero(1, 7);
  ps(0, 3) = 0.9;
  ts(0, 3) = -0.9;  // raw |d| = 1.8, wrapped = 0.2
  Mat<double> m1 = Mat<double>::Ones(1, 1);
  Mat<double> dpred;
  double l = loss_l1(ps, ts, m1, ModelStage::control, 1, &dpred);
  CHECK(l == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(dpred(0, 3) == doctest::Approx(-1.0));  // wrapped branch flips the sign
}

TEST_CASE("head swap carries the trunk bitwise and reinitializes heads") {
  ModelConfig cfg = tiny_config();
  Parameters<double> track(cfg);
  track.init(21);
  SwapReport rep;
  Parameters<double> control = swap_heads_for_control(track, 4, 22, &rep);
  CHECK(control.cfg.stage == ModelStage::control);
  CHECK(control.cfg.out_dim() == 28);

  CHECK(control.lang_table == track.lang_table);
  CHECK(control.patch_w == track.patch_w);
  CHECK(control.pos == track.pos);
  for (std::size_t l = 0; l < track.blocks.size(); ++l) {
    CHECK(control.blocks[l].qkv_w == track.blocks[l].qkv_w);
    CHECK(control.blocks[l].f1_w == track.blocks[l].f1_w);
  }
  CHECK(rep.reinitialized ==
        std::vector<std::string>{"in_w1", "in_b1", "in_w2", "in_b2", "tgt_w1", "tgt_b1",
                                 "tgt_w2", "tgt_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2"});

  // new-head parameter count from the config arithmetic
  int d = cfg.d_model, K = 4;
  std::size_t expect = std::size_t(2 * (7 * d + d + d * d + d)        // in + tgt perceptrons
                                   + d * d + d + d * (K * 7) + K * 7);  // decoder
  std::size_t have = 0;
  control.for_each([&](const std::string& n, const Mat<double>& m, bool) {
    if (n.rfind("in_", 0) == 0 || n.rfind("tgt_", 0) == 0 || n.rfind("dec_", 0) == 0)
      have += std::size_t(m.size());
  });
  CHECK(have == expect);

  // carried paths compute identically on identical inputs
  Rng rng(23);
  Mat<double> raster(1, 256);
  for (int j = 0; j < 256; ++j) raster(0, j) = rng.uniform(0, 1);
  Mat<double> pt = extract_patches<double>(cfg, raster, 0);
  CHECK(encode_image(track, pt) == encode_image(control, pt));
  CHECK(encode_language(track, {3, 4}, static_cast<LangCache<double>*>(nullptr)) ==
        encode_language(control, {3, 4}, static_cast<LangCache<double>*>(nullptr)));
  Mat<double> q(1, 16), toks = encode_image(track, pt);
  for (int j = 0; j < 16; ++j) q(0, j) = rng.normal();
  nn::PoolCache<double> pc1, pc2;
  CHECK(attention_pool(track, q, toks, pc1) == attention_pool(control, q, toks, pc2));

  CHECK_THROWS_AS(swap_heads_for_control(control, 4, 1, nullptr), std::invalid_argument);
}

TEST_CASE("loss reads only observation-position latents") {
  ModelConfig cfg = tiny_config();
  Parameters<double> p(cfg);
  p.init(31);
  ModelInput<double> in = random_input<double>(cfg, 3, 32);
  WindowCache<double> c;
  double loss = forward_window(p, in, c);

  Mat<double> h = c.seq.h;
  for (int t = 0; t < 3; ++t) {
    h.row(3 * t + 0).array() += 7.0;  // language positions
    h.row(3 * t + 2).array() -= 3.0;  // prediction-input positions
  }
  MlpCache<double> dec;
  Mat<double> preds = decode_prediction(p, obs_latents(h), dec);
  double loss2 = loss_l1(preds, in.target, in.mask, cfg.stage, cfg.n_points());
  CHECK(loss == loss2);
}

TEST_CASE("shape closure over a config matrix") {
  for (int d : {16, 32})
    for (int layers : {1, 2})
      for (int views : {1, 2})
        for (ModelStage stage : {ModelStage::track, ModelStage::control}) {
          ModelConfig cfg = tiny_config(stage, views);
          cfg.d_model = d;
          cfg.n_layers = layers;
          Parameters<float> p(cfg);
          p.init(41);
          ModelInput<float> in = random_input<float>(cfg, 2, 42);
          WindowCache<float> c;
          forward_window(p, in, c);
          CHECK(c.preds.rows() == 2);
          CHECK(int(c.preds.cols()) == cfg.out_dim());
          CHECK(int(c.z_obs.cols()) == d);
          CHECK(c.seq.s0.rows() == 6);
        }

  // parameter count is a pure function of the config
  ModelConfig cfg = tiny_config();
  Parameters<double> a(cfg), b(cfg);
  a.init(1);
  b.init(2);
  CHECK(a.count() == b.count());
  std::size_t d = 16, V = 32, m = 16, pd = 16, in = 48, C3 = 12, ffn = 64, out = 48;
  std::size_t expect = V * d + d * d + d                  // language
                       + pd * d + d + m * d               // patch encoder
                       + 2 * (in * d + d + d * d + d)     // in + tgt perceptrons
                       + 4 * (d * d + d)                  // pooling
                       + C3 * d                           // positions
                       + 2 * (2 * d + d * 3 * d + 3 * d + d * d + d + 2 * d + d * ffn + ffn +
                              ffn * d + d)                // blocks
                       + 2 * d                            // final norm
                       + d * d + d + d * out + out;       // decoder
  CHECK(a.count() == expect);
}
