#pragma once

// Dense layer primitives with hand-written backward passes. Tokens are rows;
// weights are [d_in, d_out]; biases are [1, d_out] rows. Everything is
// templated on the scalar so the same code runs in f32 for training and f64
// for finite-difference verification.

#include "trackctl/common.hpp"

#include <cmath>
#include <vector>

namespace trackctl::nn {

template <class S>
Mat<S> linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  Mat<S> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// dW/db accumulate; returns dX.
template <class S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Mat<S>& dw,
                       Mat<S>& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

template <class S>
S gelu_scalar(S x) {
  return S(0.5) * x * (S(1) + S(std::erf(double(x) * 0.7071067811865475)));
}
template <class S>
S gelu_grad_scalar(S x) {
  double xd = double(x);
  double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475));
  double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
  return S(cdf + xd * pdf);
}

template <class S>
Mat<S> gelu(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return gelu_scalar(v); });
}
template <class S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  return dy.cwiseProduct(x.unaryExpr([](S v) { return gelu_grad_scalar(v); }));
}

// ---- layer norm ---------------------------------------------------------

template <class S>
struct LayerNormCache {
  Mat<S> xhat;   // [N, d]
  Vec<S> rstd;   // [N]
};

template <class S>
Mat<S> layernorm(const Mat<S>& x, const Mat<S>& gamma, const Mat<S>& beta,
                 LayerNormCache<S>& cache) {
  const S eps = S(1e-5);
  const Eigen::Index n = x.rows(), d = x.cols();
  cache.xhat.resize(n, d);
  cache.rstd.resize(n);
  Mat<S> y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    S mean = x.row(i).mean();
    S var = (x.row(i).array() - mean).square().mean();
    S rstd = S(1) / std::sqrt(var + eps);
    cache.rstd[i] = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mean) * rstd;
    y.row(i) = cache.xhat.row(i).cwiseProduct(gamma.row(0)) + beta.row(0);
  }
  return y;
}

template <class S>
Mat<S> layernorm_backward(const LayerNormCache<S>& cache, const Mat<S>& gamma, const Mat<S>& dy,
                          Mat<S>& dgamma, Mat<S>& dbeta) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  Mat<S> dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto xhat = cache.xhat.row(i).array();
    Eigen::Array<S, 1, Eigen::Dynamic> dxhat = dy.row(i).array() * gamma.row(0).array();
    dgamma.row(0).array() += dy.row(i).array() * xhat;
    dbeta.row(0) += dy.row(i);
    S m1 = dxhat.mean();
    S m2 = (dxhat * xhat).mean();
    dx.row(i) = ((dxhat - m1 - xhat * m2) * cache.rstd[i]).matrix();
  }
  return dx;
}

// ---- softmax ------------------------------------------------------------

template <class S>
void softmax_rows_inplace(Mat<S>& x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    S mx = x.row(i).maxCoeff();
    x.row(i) = (x.row(i).array() - mx).exp();
    x.row(i) /= x.row(i).sum();
  }
}

// dL/dlogits given probs p and dL/dp, per row.
template <class S>
Mat<S> softmax_backward(const Mat<S>& p, const Mat<S>& dp) {
  Mat<S> dl(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    S dot = p.row(i).dot(dp.row(i));
    dl.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
  }
  return dl;
}

// ---- multi-head causal self-attention -------------------------------------

template <class S>
struct AttentionCache {
  Mat<S> x;                   // [L, d] (post-LN input)
  Mat<S> qkv;                 // [L, 3d]
  std::vector<Mat<S>> att;    // per head [L, L]
  Mat<S> concat;              // [L, d] heads concatenated
};

template <class S>
Mat<S> self_attention(const Mat<S>& x, const Mat<S>& wqkv, const Mat<S>& bqkv,
                      const Mat<S>& wo, const Mat<S>& bo, int n_heads, bool causal,
                      AttentionCache<S>& c) {
  const Eigen::Index L = x.rows(), d = x.cols();
  const Eigen::Index dh = d / n_heads;
  const S scale = S(1.0 / std::sqrt(double(dh)));
  c.x = x;
  c.qkv = linear(x, wqkv, bqkv);
  c.att.assign(std::size_t(n_heads), Mat<S>());
  c.concat.resize(L, d);
  for (int h = 0; h < n_heads; ++h) {
    auto q = c.qkv.block(0, h * dh, L, dh);
    auto k = c.qkv.block(0, d + h * dh, L, dh);
    auto v = c.qkv.block(0, 2 * d + h * dh, L, dh);
    Mat<S> logits = q * k.transpose() * scale;
    if (causal) {
      for (Eigen::Index i = 0; i < L; ++i)
        for (Eigen::Index j = i + 1; j < L; ++j)
          logits(i, j) = S(-std::numeric_limits<double>::infinity());
    }
    softmax_rows_inplace(logits);
    c.att[std::size_t(h)] = std::move(logits);
    c.concat.block(0, h * dh, L, dh).noalias() = c.att[std::size_t(h)] * v;
  }
  return linear(c.concat, wo, bo);
}

template <class S>
Mat<S> self_attention_backward(const AttentionCache<S>& c, const Mat<S>& wqkv, const Mat<S>& wo,
                               const Mat<S>& dy, int n_heads, Mat<S>& dwqkv, Mat<S>& dbqkv,
                               Mat<S>& dwo, Mat<S>& dbo) {
  const Eigen::Index L = c.x.rows(), d = c.x.cols();
  const Eigen::Index dh = d / n_heads;
  const S scale = S(1.0 / std::sqrt(double(dh)));
  Mat<S> dconcat = linear_backward(c.concat, wo, dy, dwo, dbo);
  Mat<S> dqkv = Mat<S>::Zero(L, 3 * d);
  for (int h = 0; h < n_heads; ++h) {
    auto q = c.qkv.block(0, h * dh, L, dh);
    auto k = c.qkv.block(0, d + h * dh, L, dh);
    auto v = c.qkv.block(0, 2 * d + h * dh, L, dh);
    const Mat<S>& p = c.att[std::size_t(h)];
    Mat<S> dctx = dconcat.block(0, h * dh, L, dh);
    Mat<S> dp = dctx * v.transpose();
    dqkv.block(0, 2 * d + h * dh, L, dh).noalias() = p.transpose() * dctx;
    Mat<S> dlogits = softmax_backward(p, dp) * scale;
    dqkv.block(0, h * dh, L, dh).noalias() = dlogits * k;
    dqkv.block(0, d + h * dh, L, dh).noalias() = dlogits.transpose() * q;
  }
  return linear_backward(c.x, wqkv, dqkv, dwqkv, dbqkv);
}

// ---- single-query multi-head cross-attention (attention pooling) ----------

template <class S>
struct PoolCache {
  Mat<S> query;   // [1, d] raw query input
  Mat<S> tokens;  // [m, d]
  Mat<S> q, k, v; // projected
  Mat<S> att;     // [heads, m]
  Mat<S> concat;  // [1, d]
};

template <class S>
Mat<S> attention_pool(const Mat<S>& query, const Mat<S>& tokens, const Mat<S>& wq,
                      const Mat<S>& bq, const Mat<S>& wk, const Mat<S>& bk, const Mat<S>& wv,
                      const Mat<S>& bv, const Mat<S>& wo, const Mat<S>& bo, int n_heads,
                      PoolCache<S>& c) {
  const Eigen::Index d = query.cols(), m = tokens.rows();
  const Eigen::Index dh = d / n_heads;
  const S scale = S(1.0 / std::sqrt(double(dh)));
  c.query = query;
  c.tokens = tokens;
  c.q = linear(query, wq, bq);
  c.k = linear(tokens, wk, bk);
  c.v = linear(tokens, wv, bv);
  c.att.resize(n_heads, m);
  c.concat.resize(1, d);
  for (int h = 0; h < n_heads; ++h) {
    Mat<S> logits = c.q.block(0, h * dh, 1, dh) * c.k.block(0, h * dh, m, dh).transpose() * scale;
    softmax_rows_inplace(logits);
    c.att.row(h) = logits.row(0);
    c.concat.block(0, h * dh, 1, dh).noalias() =
        c.att.row(h) * c.v.block(0, h * dh, m, dh);
  }
  return linear(c.concat, wo, bo);
}

template <class S>
void attention_pool_backward(const PoolCache<S>& c, const Mat<S>& wq, const Mat<S>& wk,
                             const Mat<S>& wv, const Mat<S>& wo, const Mat<S>& dy, int n_heads,
                             Mat<S>& dquery, Mat<S>& dtokens, Mat<S>& dwq, Mat<S>& dbq,
                             Mat<S>& dwk, Mat<S>& dbk, Mat<S>& dwv, Mat<S>& dbv, Mat<S>& dwo,
                             Mat<S>& dbo) {
  const Eigen::Index d = c.query.cols(), m = c.tokens.rows();
  const Eigen::Index dh = d / n_heads;
  const S scale = S(1.0 / std::sqrt(double(dh)));
  Mat<S> dconcat = linear_backward(c.concat, wo, dy, dwo, dbo);
  Mat<S> dq = Mat<S>::Zero(1, d), dk = Mat<S>::Zero(m, d), dv = Mat<S>::Zero(m, d);
  for (int h = 0; h < n_heads; ++h) {
    Mat<S> p = c.att.row(h);
    Mat<S> dctx = dconcat.block(0, h * dh, 1, dh);
    Mat<S> dp = dctx * c.v.block(0, h * dh, m, dh).transpose();
    dv.block(0, h * dh, m, dh).noalias() = p.transpose() * dctx;
    Mat<S> dlogits = softmax_backward(p, dp) * scale;
    dq.block(0, h * dh, 1, dh).noalias() = dlogits * c.k.block(0, h * dh, m, dh);
    dk.block(0, h * dh, m, dh).noalias() = dlogits.transpose() * c.q.block(0, h * dh, 1, dh);
  }
  dquery += linear_backward(c.query, wq, dq, dwq, dbq);
  dtokens += linear_backward(c.tokens, wk, dk, dwk, dbk);
  dtokens += linear_backward(c.tokens, wv, dv, dwv, dbv);
}

}  // namespace trackctl::nn
