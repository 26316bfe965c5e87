#pragma once

// Query transformer. N learnable queries are concatenated with the embedded
// point tokens; every block runs bidirectional self-attention over the joint
// sequence, cross-attention from the sequence to the image patches, and a
// feed-forward layer, each followed by residual + layer norm. A final linear
// layer maps to the language model width. Rows [0, N) of the projected output
// are the soft prompt; the remaining rows are returned but unused downstream.

#include <optional>
#include <string>
#include <vector>

#include "regionvlm/error.hpp"
#include "regionvlm/nn.hpp"
#include "regionvlm/scribble_codec.hpp"
#include "regionvlm/visual_encoder.hpp"

namespace regionvlm {

struct QFormerConfig {
  int num_queries = 8;
  int d_model = 32;
  int d_visual = 16;
  int d_out = 32;
  int layers = 2;
  int heads = 2;
  int ffn_hidden = 64;
  int max_point_tokens = 64;

  void validate() const {
    if (num_queries < 1 || d_model < 1 || d_visual < 1 || d_out < 1 || layers < 1 || heads < 1 || ffn_hidden < 1 ||
        max_point_tokens < 0)
      throw ConfigError("query transformer dimensions must be positive");
    if (d_model % heads != 0) throw ConfigError("query transformer width must be divisible by head count");
  }
  bool operator==(const QFormerConfig&) const = default;
};

template <class S>
struct QFormerBlock {
  nn::Attention<S> self_attn;
  nn::LayerNorm<S> ln_self;
  nn::Attention<S> cross_attn;
  nn::LayerNorm<S> ln_cross;
  nn::FeedForward<S> ffn;
  nn::LayerNorm<S> ln_ffn;

  void visit(const std::string& prefix, const nn::TensorVisitor<S>& f) {
    self_attn.visit(prefix + ".self_attn", f);
    ln_self.visit(prefix + ".ln_self", f);
    cross_attn.visit(prefix + ".cross_attn", f);
    ln_cross.visit(prefix + ".ln_cross", f);
    ffn.visit(prefix + ".ffn", f);
    ln_ffn.visit(prefix + ".ln_ffn", f);
  }
};

template <class S>
struct QFormerParams {
  QFormerConfig config;
  nn::Mat<S> queries;      // N x d_model
  nn::Mat<S> token_embed;  // point vocab x d_model
  nn::Mat<S> pos_embed;    // max_point_tokens x d_model
  nn::LayerNorm<S> ln_embed;
  std::vector<QFormerBlock<S>> blocks;
  nn::Linear<S> out;  // d_model -> d_out

  // Declared order; also the checkpoint order.
  void visit(const nn::TensorVisitor<S>& f) {
    f("queries", queries);
    f("token_embed", token_embed);
    f("pos_embed", pos_embed);
    ln_embed.visit("ln_embed", f);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("block" + std::to_string(i), f);
    out.visit("out", f);
  }

  static QFormerParams init(const QFormerConfig& cfg, Rng& rng) {
    cfg.validate();
    QFormerParams p;
    p.config = cfg;
    p.queries = nn::randn<S>(cfg.num_queries, cfg.d_model, 1.0, rng);
    p.token_embed = nn::randn<S>(PointTokenVocab::kSize, cfg.d_model, 1.0, rng);
    p.pos_embed = nn::randn<S>(std::max(cfg.max_point_tokens, 1), cfg.d_model, 0.5, rng);
    p.ln_embed = nn::LayerNorm<S>::init(cfg.d_model);
    for (int l = 0; l < cfg.layers; ++l) {
      QFormerBlock<S> b;
      b.self_attn = nn::Attention<S>::init(cfg.d_model, cfg.d_model, cfg.heads, rng);
      b.ln_self = nn::LayerNorm<S>::init(cfg.d_model);
      b.cross_attn = nn::Attention<S>::init(cfg.d_model, cfg.d_visual, cfg.heads, rng);
      b.ln_cross = nn::LayerNorm<S>::init(cfg.d_model);
      b.ffn = nn::FeedForward<S>::init(cfg.d_model, cfg.ffn_hidden, rng);
      b.ln_ffn = nn::LayerNorm<S>::init(cfg.d_model);
      p.blocks.push_back(std::move(b));
    }
    p.out = nn::Linear<S>::init(cfg.d_model, cfg.d_out, rng);
    return p;
  }

  static QFormerParams zeros(const QFormerConfig& cfg) {
    Rng rng(0);
    QFormerParams p = init(cfg, rng);
    p.visit([](const std::string&, nn::Mat<S>& m) { m.setZero(); });
    return p;
  }
};

// Softmax weights per layer and head.
template <class S>
struct AttentionRecord {
  std::vector<std::vector<nn::Mat<S>>> self_attn;   // [layer][head]: (N+L) x (N+L)
  std::vector<std::vector<nn::Mat<S>>> cross_attn;  // [layer][head]: (N+L) x patches
  int grid_rows = 0;
  int grid_cols = 0;
};

template <class S>
struct QFormerOutput {
  nn::Mat<S> z_hat;  // N x d_out
  nn::Mat<S> w_hat;  // L x d_out
  AttentionRecord<S> attention;
};

template <class S>
struct QFormerBlockCache {
  nn::AttentionCache<S> self_attn, cross_attn;
  nn::LayerNormCache<S> ln_self, ln_cross, ln_ffn;
  nn::FeedForwardCache<S> ffn;
};

template <class S>
struct QFormerCache {
  std::vector<int> tokens;
  nn::LayerNormCache<S> ln_embed;
  std::vector<QFormerBlockCache<S>> blocks;
  nn::Mat<S> hidden;  // input to the output projection
};

inline void check_point_tokens(const QFormerConfig& cfg, const std::vector<int>& tokens) {
  if (static_cast<int>(tokens.size()) > cfg.max_point_tokens)
    throw DomainError("too many point tokens: " + std::to_string(tokens.size()));
  for (int t : tokens)
    if (t < 0 || t >= PointTokenVocab::kSize) throw DomainError("unknown point token id: " + std::to_string(t));
}

template <class S>
QFormerOutput<S> qformer_forward(const QFormerParams<S>& p, const std::vector<int>& tokens, const ImageFeatures<S>& image,
                                 QFormerCache<S>* cache = nullptr) {
  const auto& cfg = p.config;
  check_point_tokens(cfg, tokens);
  if (image.grid.cols() != cfg.d_visual || image.grid.rows() != image.patches() || image.patches() < 1)
    throw ShapeError("image features do not match the query transformer");

  QFormerCache<S> local;
  QFormerCache<S>& c = cache ? *cache : local;
  c.tokens = tokens;
  c.blocks.resize(static_cast<std::size_t>(cfg.layers));

  const auto n = static_cast<Eigen::Index>(cfg.num_queries);
  const auto len = static_cast<Eigen::Index>(tokens.size());
  nn::Mat<S> x(n + len, cfg.d_model);
  x.topRows(n) = p.queries;
  for (Eigen::Index i = 0; i < len; ++i)
    x.row(n + i) = p.token_embed.row(tokens[static_cast<std::size_t>(i)]) + p.pos_embed.row(i);
  nn::Mat<S> h = nn::layernorm_forward(p.ln_embed, x, c.ln_embed);

  QFormerOutput<S> out;
  out.attention.grid_rows = image.rows;
  out.attention.grid_cols = image.cols;
  for (int l = 0; l < cfg.layers; ++l) {
    const auto& b = p.blocks[static_cast<std::size_t>(l)];
    auto& bc = c.blocks[static_cast<std::size_t>(l)];
    nn::Mat<S> a = nn::attention_forward(b.self_attn, h, h, false, bc.self_attn);
    h = nn::layernorm_forward(b.ln_self, nn::Mat<S>(h + a), bc.ln_self);
    nn::Mat<S> ca = nn::attention_forward(b.cross_attn, h, image.grid, false, bc.cross_attn);
    h = nn::layernorm_forward(b.ln_cross, nn::Mat<S>(h + ca), bc.ln_cross);
    nn::Mat<S> f = nn::ffn_forward(b.ffn, h, bc.ffn);
    h = nn::layernorm_forward(b.ln_ffn, nn::Mat<S>(h + f), bc.ln_ffn);
    out.attention.self_attn.push_back(bc.self_attn.probs);
    out.attention.cross_attn.push_back(bc.cross_attn.probs);
  }
  c.hidden = h;
  nn::Mat<S> projected = nn::linear_forward(p.out, h);
  out.z_hat = projected.topRows(n);
  out.w_hat = projected.bottomRows(len);
  return out;
}

// Backpropagates dL/dZhat (the word rows carry no gradient). Accumulates into
// `grads`. The gradient w.r.t. image features is formed along the way and
// dropped: the visual encoder is frozen.
template <class S>
void qformer_backward(const QFormerParams<S>& p, const QFormerCache<S>& c, const nn::Mat<S>& d_zhat,
                      QFormerParams<S>& grads) {
  const auto& cfg = p.config;
  const auto n = static_cast<Eigen::Index>(cfg.num_queries);
  const auto len = static_cast<Eigen::Index>(c.tokens.size());
  if (d_zhat.rows() != n || d_zhat.cols() != cfg.d_out) throw ShapeError("upstream gradient must be N x d_out");
  if (c.hidden.rows() != n + len) throw ShapeError("activation cache does not match the gradient");

  nn::Mat<S> dproj = nn::Mat<S>::Zero(n + len, cfg.d_out);
  dproj.topRows(n) = d_zhat;
  nn::Mat<S> dh = nn::linear_backward(p.out, c.hidden, dproj, &grads.out);

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const auto& b = p.blocks[static_cast<std::size_t>(l)];
    const auto& bc = c.blocks[static_cast<std::size_t>(l)];
    auto& gb = grads.blocks[static_cast<std::size_t>(l)];
    nn::Mat<S> ds = nn::layernorm_backward(b.ln_ffn, bc.ln_ffn, dh, &gb.ln_ffn);
    dh = ds + nn::ffn_backward(b.ffn, bc.ffn, ds, &gb.ffn);
    ds = nn::layernorm_backward(b.ln_cross, bc.ln_cross, dh, &gb.ln_cross);
    dh = ds + nn::attention_backward(b.cross_attn, bc.cross_attn, ds, &gb.cross_attn).dxq;
    ds = nn::layernorm_backward(b.ln_self, bc.ln_self, dh, &gb.ln_self);
    auto sg = nn::attention_backward(b.self_attn, bc.self_attn, ds, &gb.self_attn);
    dh = ds + sg.dxq + sg.dxkv;
  }
  nn::Mat<S> dx = nn::layernorm_backward(p.ln_embed, c.ln_embed, dh, &grads.ln_embed);
  grads.queries += dx.topRows(n);
  for (Eigen::Index i = 0; i < len; ++i) {
    grads.token_embed.row(c.tokens[static_cast<std::size_t>(i)]) += dx.row(n + i);
    grads.pos_embed.row(i) += dx.row(n + i);
  }
}

struct CrossAttentionMap {
  nn::Mat<double> weights;  // N x patches, rows sum to 1
  int grid_rows = 0;
  int grid_cols = 0;
};

// Query-to-patch attention for one layer/head, or the mean over the unset
// selectors. Only the N query rows are returned.
template <class S>
CrossAttentionMap cross_attention_map(const QFormerOutput<S>& out, std::optional<int> layer = std::nullopt,
                                      std::optional<int> head = std::nullopt) {
  const auto& rec = out.attention.cross_attn;
  if (rec.empty() || rec.front().empty()) throw DomainError("no attention record");
  const int layers = static_cast<int>(rec.size());
  const int heads = static_cast<int>(rec.front().size());
  if (layer && (*layer < 0 || *layer >= layers)) throw DomainError("layer selector out of range");
  if (head && (*head < 0 || *head >= heads)) throw DomainError("head selector out of range");
  const auto n = out.z_hat.rows();
  const auto patches = rec.front().front().cols();
  CrossAttentionMap m{nn::Mat<double>::Zero(n, patches), out.attention.grid_rows, out.attention.grid_cols};
  int used = 0;
  for (int l = 0; l < layers; ++l) {
    if (layer && l != *layer) continue;
    for (int h = 0; h < heads; ++h) {
      if (head && h != *head) continue;
      m.weights += rec[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)].topRows(n).template cast<double>();
      ++used;
    }
  }
  m.weights /= static_cast<double>(used);
  return m;
}

}  // namespace regionvlm
