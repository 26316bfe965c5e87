#pragma once

// Dense layers with hand-written backward passes. Every layer is a plain
// parameter struct plus forward/backward free functions; forward fills a
// cache struct that backward consumes. Gradients accumulate (+=) into a
// parameter struct of the same shape.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "regionvlm/error.hpp"
#include "regionvlm/rng.hpp"

namespace regionvlm::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using TensorVisitor = std::function<void(const std::string&, Mat<S>&)>;

template <class S>
Mat<S> randn(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(scale * normal(rng));
  return m;
}

// ---------------------------------------------------------------- Linear

template <class S>
struct Linear {
  Mat<S> w;  // in x out
  Mat<S> b;  // 1 x out

  static Linear init(int in, int out, Rng& rng) {
    return {randn<S>(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng), Mat<S>::Zero(1, out)};
  }
  void visit(const std::string& prefix, const TensorVisitor<S>& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

template <class S>
Mat<S> linear_forward(const Linear<S>& p, const Mat<S>& x) {
  Mat<S> y = x * p.w;
  y.rowwise() += p.b.row(0);
  return y;
}

// Returns dL/dx; accumulates weight gradients when `g` is non-null.
template <class S>
Mat<S> linear_backward(const Linear<S>& p, const Mat<S>& x, const Mat<S>& dy, Linear<S>* g) {
  if (g) {
    g->w.noalias() += x.transpose() * dy;
    g->b += dy.colwise().sum();
  }
  return dy * p.w.transpose();
}

// ---------------------------------------------------------------- LayerNorm

template <class S>
struct LayerNorm {
  Mat<S> gamma;  // 1 x d
  Mat<S> beta;   // 1 x d

  static LayerNorm init(int d) { return {Mat<S>::Ones(1, d), Mat<S>::Zero(1, d)}; }
  void visit(const std::string& prefix, const TensorVisitor<S>& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

template <class S>
struct LayerNormCache {
  Mat<S> xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

template <class S>
Mat<S> layernorm_forward(const LayerNorm<S>& p, const Mat<S>& x, LayerNormCache<S>& c) {
  const auto n = x.rows();
  const auto d = static_cast<S>(x.cols());
  c.xhat.resize(n, x.cols());
  c.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).sum() / d;
    const S var = (x.row(i).array() - mean).square().sum() / d;
    const S rstd = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    c.rstd(i) = rstd;
    c.xhat.row(i) = (x.row(i).array() - mean) * rstd;
  }
  Mat<S> y = c.xhat.array().rowwise() * p.gamma.row(0).array();
  y.rowwise() += p.beta.row(0);
  return y;
}

template <class S>
Mat<S> layernorm_backward(const LayerNorm<S>& p, const LayerNormCache<S>& c, const Mat<S>& dy, LayerNorm<S>* g) {
  if (g) {
    g->gamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    g->beta += dy.colwise().sum();
  }
  const auto d = static_cast<S>(dy.cols());
  Mat<S> dxhat = dy.array().rowwise() * p.gamma.row(0).array();
  Mat<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const S m1 = dxhat.row(i).sum() / d;
    const S m2 = dxhat.row(i).dot(c.xhat.row(i)) / d;
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

// ---------------------------------------------------------------- GELU (tanh form)

template <class S>
Mat<S> gelu_forward(const Mat<S>& x) {
  const S k = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  return x.unaryExpr([k](S v) { return S(0.5) * v * (S(1) + std::tanh(k * (v + S(0.044715) * v * v * v))); });
}

template <class S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  const S k = static_cast<S>(0.7978845608028654);
  Mat<S> dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const S v = x.data()[i];
    const S t = std::tanh(k * (v + S(0.044715) * v * v * v));
    const S dt = (S(1) - t * t) * k * (S(1) + S(3 * 0.044715) * v * v);
    dx.data()[i] = dy.data()[i] * (S(0.5) * (S(1) + t) + S(0.5) * v * dt);
  }
  return dx;
}

// ---------------------------------------------------------------- Feed-forward

template <class S>
struct FeedForward {
  Linear<S> up;
  Linear<S> down;

  static FeedForward init(int d, int hidden, Rng& rng) { return {Linear<S>::init(d, hidden, rng), Linear<S>::init(hidden, d, rng)}; }
  void visit(const std::string& prefix, const TensorVisitor<S>& f) {
    up.visit(prefix + ".up", f);
    down.visit(prefix + ".down", f);
  }
};

template <class S>
struct FeedForwardCache {
  Mat<S> x, pre, act;
};

template <class S>
Mat<S> ffn_forward(const FeedForward<S>& p, const Mat<S>& x, FeedForwardCache<S>& c) {
  c.x = x;
  c.pre = linear_forward(p.up, x);
  c.act = gelu_forward(c.pre);
  return linear_forward(p.down, c.act);
}

template <class S>
Mat<S> ffn_backward(const FeedForward<S>& p, const FeedForwardCache<S>& c, const Mat<S>& dy, FeedForward<S>* g) {
  Mat<S> dact = linear_backward(p.down, c.act, dy, g ? &g->down : nullptr);
  Mat<S> dpre = gelu_backward(c.pre, dact);
  return linear_backward(p.up, c.x, dpre, g ? &g->up : nullptr);
}

// ---------------------------------------------------------------- Multi-head attention

// Queries come from `xq` (n x d_model); keys/values from `xkv` (m x d_kv).
template <class S>
struct Attention {
  int heads = 1;
  Linear<S> q, k, v, o;

  static Attention init(int d_model, int d_kv, int heads, Rng& rng) {
    if (heads < 1 || d_model % heads != 0) throw ShapeError("model width must be divisible by head count");
    return {heads, Linear<S>::init(d_model, d_model, rng), Linear<S>::init(d_kv, d_model, rng),
            Linear<S>::init(d_kv, d_model, rng), Linear<S>::init(d_model, d_model, rng)};
  }
  void visit(const std::string& prefix, const TensorVisitor<S>& f) {
    q.visit(prefix + ".q", f);
    k.visit(prefix + ".k", f);
    v.visit(prefix + ".v", f);
    o.visit(prefix + ".o", f);
  }
};

template <class S>
struct AttentionCache {
  Mat<S> xq, xkv, q, k, v, ctx;
  std::vector<Mat<S>> probs;  // per head, n x m
};

template <class S>
void softmax_rows(Mat<S>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const S mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

// With `causal`, query row i may only see key rows j <= i.
template <class S>
Mat<S> attention_forward(const Attention<S>& p, const Mat<S>& xq, const Mat<S>& xkv, bool causal, AttentionCache<S>& c) {
  c.xq = xq;
  c.xkv = xkv;
  c.q = linear_forward(p.q, xq);
  c.k = linear_forward(p.k, xkv);
  c.v = linear_forward(p.v, xkv);
  const auto n = xq.rows();
  const auto m = xkv.rows();
  const auto dh = c.q.cols() / p.heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  c.ctx.resize(n, c.q.cols());
  c.probs.resize(static_cast<std::size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    Mat<S> s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
    if (causal)
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j) s(i, j) = -std::numeric_limits<S>::infinity();
    softmax_rows(s);
    c.ctx.middleCols(h * dh, dh).noalias() = s * c.v.middleCols(h * dh, dh);
    c.probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return linear_forward(p.o, c.ctx);
}

template <class S>
struct AttentionGrads {
  Mat<S> dxq, dxkv;
};

template <class S>
AttentionGrads<S> attention_backward(const Attention<S>& p, const AttentionCache<S>& c, const Mat<S>& dy, Attention<S>* g) {
  Mat<S> dctx = linear_backward(p.o, c.ctx, dy, g ? &g->o : nullptr);
  const auto dh = c.q.cols() / p.heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
  for (int h = 0; h < p.heads; ++h) {
    const Mat<S>& pr = c.probs[static_cast<std::size_t>(h)];
    Mat<S> dctx_h = dctx.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = pr.transpose() * dctx_h;
    Mat<S> dp = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    Mat<S> ds = pr.array() * (dp.colwise() - (dp.array() * pr.array()).rowwise().sum().matrix()).array();
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  AttentionGrads<S> out;
  out.dxq = linear_backward(p.q, c.xq, dq, g ? &g->q : nullptr);
  out.dxkv = linear_backward(p.k, c.xkv, dk, g ? &g->k : nullptr);
  out.dxkv += linear_backward(p.v, c.xkv, dv, g ? &g->v : nullptr);
  return out;
}

// ---------------------------------------------------------------- parameter-set helpers

template <class S, class Params>
std::vector<Mat<S>*> tensor_list(Params& p) {
  std::vector<Mat<S>*> out;
  p.visit([&](const std::string&, Mat<S>& m) { out.push_back(&m); });
  return out;
}

template <class S, class Params>
Params zeros_like(const Params& p) {
  Params z = p;
  z.visit([](const std::string&, Mat<S>& m) { m.setZero(); });
  return z;
}

template <class S, class Params>
double squared_norm(const Params& p) {
  double s = 0;
  const_cast<Params&>(p).visit([&](const std::string&, Mat<S>& m) { s += static_cast<double>(m.squaredNorm()); });
  return s;
}

// Converts every tensor of a parameter set to another scalar type. Params
// must expose `config` and a static `zeros(config)`.
template <class To, class From, template <class> class Params>
Params<To> cast_params(const Params<From>& src) {
  Params<To> dst = Params<To>::zeros(src.config);
  auto from = tensor_list<From>(const_cast<Params<From>&>(src));
  auto to = tensor_list<To>(dst);
  for (std::size_t i = 0; i < from.size(); ++i) *to[i] = from[i]->template cast<To>();
  return dst;
}

}  // namespace regionvlm::nn
