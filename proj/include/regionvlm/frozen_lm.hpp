#pragma once

// Small causal decoder standing in for the frozen language model. Input rows
// are either soft embeddings (query-transformer output) or token embeddings;
// the output head is tied to the token table. Once sealed, the model offers
// loss, greedy generation and gradients w.r.t. its soft inputs only.

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "regionvlm/checksum.hpp"
#include "regionvlm/error.hpp"
#include "regionvlm/nn.hpp"
#include "regionvlm/scribble_codec.hpp"

namespace regionvlm {

struct LMConfig {
  int vocab = 0;
  int d_model = 32;
  int layers = 2;
  int heads = 2;
  int ffn_hidden = 128;
  int context = 96;

  void validate() const {
    if (vocab < PointTokenVocab::kSize) throw ConfigError("language model vocabulary too small");
    if (d_model < 1 || layers < 1 || heads < 1 || ffn_hidden < 1 || context < 2)
      throw ConfigError("language model dimensions must be positive");
    if (d_model % heads != 0) throw ConfigError("language model width must be divisible by head count");
  }
  bool operator==(const LMConfig&) const = default;
};

template <class S>
struct LMBlock {
  nn::LayerNorm<S> ln_attn;
  nn::Attention<S> attn;
  nn::LayerNorm<S> ln_ffn;
  nn::FeedForward<S> ffn;

  void visit(const std::string& prefix, const nn::TensorVisitor<S>& f) {
    ln_attn.visit(prefix + ".ln_attn", f);
    attn.visit(prefix + ".attn", f);
    ln_ffn.visit(prefix + ".ln_ffn", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

template <class S>
struct LMParams {
  LMConfig config;
  nn::Mat<S> token_embed;  // vocab x d, tied with the output head
  nn::Mat<S> pos_embed;    // context x d
  std::vector<LMBlock<S>> blocks;
  nn::LayerNorm<S> ln_final;

  void visit(const nn::TensorVisitor<S>& f) {
    f("token_embed", token_embed);
    f("pos_embed", pos_embed);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("block" + std::to_string(i), f);
    ln_final.visit("ln_final", f);
  }

  static LMParams init(const LMConfig& cfg, Rng& rng) {
    cfg.validate();
    LMParams p;
    p.config = cfg;
    p.token_embed = nn::randn<S>(cfg.vocab, cfg.d_model, 1.0, rng);
    p.pos_embed = nn::randn<S>(cfg.context, cfg.d_model, 0.1, rng);
    for (int l = 0; l < cfg.layers; ++l) {
      LMBlock<S> b;
      b.ln_attn = nn::LayerNorm<S>::init(cfg.d_model);
      b.attn = nn::Attention<S>::init(cfg.d_model, cfg.d_model, cfg.heads, rng);
      b.ln_ffn = nn::LayerNorm<S>::init(cfg.d_model);
      b.ffn = nn::FeedForward<S>::init(cfg.d_model, cfg.ffn_hidden, rng);
      p.blocks.push_back(std::move(b));
    }
    p.ln_final = nn::LayerNorm<S>::init(cfg.d_model);
    return p;
  }

  static LMParams zeros(const LMConfig& cfg) {
    Rng rng(0);
    LMParams p = init(cfg, rng);
    p.visit([](const std::string&, nn::Mat<S>& m) { m.setZero(); });
    return p;
  }
};

template <class S>
std::uint64_t params_checksum(const LMParams<S>& p) {
  std::uint64_t h = kFnvOffset;
  const_cast<LMParams<S>&>(p).visit([&](const std::string&, nn::Mat<S>& m) {
    h = fnv1a_values(m.data(), static_cast<std::size_t>(m.size()), h);
  });
  return h;
}

// ---------------------------------------------------------------- prompts

template <class S>
struct SoftSegment {
  nn::Mat<S> rows;  // k x d
};

struct TextSegment {
  std::vector<int> ids;
};

template <class S>
using PromptSegment = std::variant<SoftSegment<S>, TextSegment>;

template <class S>
struct Prompt {
  std::vector<PromptSegment<S>> segments;

  Prompt& soft(nn::Mat<S> rows) {
    segments.emplace_back(SoftSegment<S>{std::move(rows)});
    return *this;
  }
  Prompt& text(std::vector<int> ids) {
    if (!ids.empty()) segments.emplace_back(TextSegment{std::move(ids)});
    return *this;
  }
  std::size_t length() const {
    std::size_t n = 0;
    for (const auto& s : segments)
      n += std::holds_alternative<TextSegment>(s) ? std::get<TextSegment>(s).ids.size()
                                                   : static_cast<std::size_t>(std::get<SoftSegment<S>>(s).rows.rows());
    return n;
  }
  std::size_t soft_segment_count() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += std::holds_alternative<SoftSegment<S>>(s) ? 1 : 0;
    return n;
  }
};

// ---------------------------------------------------------------- forward / backward

template <class S>
struct LMBlockCache {
  nn::LayerNormCache<S> ln_attn, ln_ffn;
  nn::AttentionCache<S> attn;
  nn::FeedForwardCache<S> ffn;
};

template <class S>
struct LMCache {
  std::vector<int> position_token;  // token id per position, -1 for soft rows
  std::vector<LMBlockCache<S>> blocks;
  nn::LayerNormCache<S> ln_final;
  nn::Mat<S> final_hidden;  // after ln_final
};

namespace detail {

// Builds the input sequence prompt ++ continuation and runs the decoder.
// Returns logits for every position.
template <class S>
nn::Mat<S> lm_forward(const LMParams<S>& p, const Prompt<S>& prompt, const std::vector<int>& continuation,
                      LMCache<S>& c) {
  const auto& cfg = p.config;
  const std::size_t total = prompt.length() + continuation.size();
  if (total == 0) throw DomainError("empty language model input");
  if (total > static_cast<std::size_t>(cfg.context))
    throw ContextOverflow("sequence of " + std::to_string(total) + " exceeds context " + std::to_string(cfg.context));

  nn::Mat<S> x(static_cast<Eigen::Index>(total), cfg.d_model);
  c.position_token.assign(total, -1);
  Eigen::Index pos = 0;
  auto put_token = [&](int id) {
    if (id < 0 || id >= cfg.vocab) throw DomainError("token id out of range: " + std::to_string(id));
    x.row(pos) = p.token_embed.row(id);
    c.position_token[static_cast<std::size_t>(pos)] = id;
    ++pos;
  };
  for (const auto& seg : prompt.segments) {
    if (const auto* soft = std::get_if<SoftSegment<S>>(&seg)) {
      if (soft->rows.cols() != cfg.d_model) throw ShapeError("soft prompt width does not match the language model");
      x.middleRows(pos, soft->rows.rows()) = soft->rows;
      pos += soft->rows.rows();
    } else {
      for (int id : std::get<TextSegment>(seg).ids) put_token(id);
    }
  }
  for (int id : continuation) put_token(id);
  x += p.pos_embed.topRows(x.rows());

  c.blocks.resize(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    const auto& b = p.blocks[static_cast<std::size_t>(l)];
    auto& bc = c.blocks[static_cast<std::size_t>(l)];
    nn::Mat<S> a = nn::layernorm_forward(b.ln_attn, x, bc.ln_attn);
    x += nn::attention_forward(b.attn, a, a, true, bc.attn);
    nn::Mat<S> f = nn::layernorm_forward(b.ln_ffn, x, bc.ln_ffn);
    x += nn::ffn_forward(b.ffn, f, bc.ffn);
  }
  c.final_hidden = nn::layernorm_forward(p.ln_final, x, c.ln_final);
  return c.final_hidden * p.token_embed.transpose();
}

// Returns dL/d(input rows). Parameter gradients are accumulated only when
// `g` is non-null, which the sealed model never passes.
template <class S>
nn::Mat<S> lm_backward(const LMParams<S>& p, const LMCache<S>& c, const nn::Mat<S>& dlogits, LMParams<S>* g) {
  const auto& cfg = p.config;
  if (g) g->token_embed.noalias() += dlogits.transpose() * c.final_hidden;
  nn::Mat<S> dh = dlogits * p.token_embed;
  nn::Mat<S> dx = nn::layernorm_backward(p.ln_final, c.ln_final, dh, g ? &g->ln_final : nullptr);
  for (int l = cfg.layers - 1; l >= 0; --l) {
    const auto& b = p.blocks[static_cast<std::size_t>(l)];
    const auto& bc = c.blocks[static_cast<std::size_t>(l)];
    auto* gb = g ? &g->blocks[static_cast<std::size_t>(l)] : nullptr;
    nn::Mat<S> df = nn::ffn_backward(b.ffn, bc.ffn, dx, gb ? &gb->ffn : nullptr);
    dx += nn::layernorm_backward(b.ln_ffn, bc.ln_ffn, df, gb ? &gb->ln_ffn : nullptr);
    auto ag = nn::attention_backward(b.attn, bc.attn, dx, gb ? &gb->attn : nullptr);
    nn::Mat<S> da = ag.dxq + ag.dxkv;
    dx += nn::layernorm_backward(b.ln_attn, bc.ln_attn, da, gb ? &gb->ln_attn : nullptr);
  }
  if (g) {
    g->pos_embed.topRows(dx.rows()) += dx;
    for (std::size_t i = 0; i < c.position_token.size(); ++i)
      if (c.position_token[i] >= 0) g->token_embed.row(c.position_token[i]) += dx.row(static_cast<Eigen::Index>(i));
  }
  return dx;
}

// Mean cross-entropy of `target` under teacher forcing, plus dL/dlogits.
template <class S>
double target_loss(const nn::Mat<S>& logits, std::size_t prompt_len, const std::vector<int>& target,
                   nn::Mat<S>* dlogits, double scale = 1.0) {
  if (dlogits) *dlogits = nn::Mat<S>::Zero(logits.rows(), logits.cols());
  double loss = 0;
  const double inv_t = 1.0 / static_cast<double>(target.size());
  for (std::size_t t = 0; t < target.size(); ++t) {
    const auto row = static_cast<Eigen::Index>(prompt_len + t - 1);
    const S mx = logits.row(row).maxCoeff();
    Eigen::Matrix<S, 1, Eigen::Dynamic> e = (logits.row(row).array() - mx).exp();
    const S z = e.sum();
    loss += -(static_cast<double>(logits(row, target[t]) - mx) - std::log(static_cast<double>(z)));
    if (dlogits) {
      e /= z;
      e(target[t]) -= S(1);
      dlogits->row(row) = e * static_cast<S>(inv_t * scale);
    }
  }
  return loss * inv_t;
}

// Soft-row gradients, split per soft segment in prompt order.
template <class S>
std::vector<nn::Mat<S>> split_soft_gradients(const Prompt<S>& prompt, const nn::Mat<S>& dx) {
  std::vector<nn::Mat<S>> out;
  Eigen::Index pos = 0;
  for (const auto& seg : prompt.segments) {
    if (const auto* soft = std::get_if<SoftSegment<S>>(&seg)) {
      out.emplace_back(dx.middleRows(pos, soft->rows.rows()));
      pos += soft->rows.rows();
    } else {
      pos += static_cast<Eigen::Index>(std::get<TextSegment>(seg).ids.size());
    }
  }
  return out;
}

template <class S>
void check_lm_inputs(const Prompt<S>& prompt, const std::vector<int>& target) {
  if (target.empty()) throw DomainError("language model target must be non-empty");
  if (prompt.length() == 0) throw DomainError("language model prompt must be non-empty");
}

}  // namespace detail

template <class S>
struct LMLoss {
  double loss = 0;
  nn::Mat<S> logits;  // one row per input position
};

template <class S>
struct LMInputGradient {
  double loss = 0;
  std::vector<nn::Mat<S>> soft;  // per soft segment, in prompt order
};

// The language model after sealing: parameters are immutable and only input
// gradients are exposed.
template <class S>
class FrozenLM {
 public:
  FrozenLM() = default;
  explicit FrozenLM(LMParams<S> params) : params_(std::move(params)), checksum_(params_checksum(params_)) {}

  const LMParams<S>& params() const { return params_; }
  const LMConfig& config() const { return params_.config; }
  std::uint64_t seal_checksum() const { return checksum_; }
  bool verify() const { return params_checksum(params_) == checksum_; }

  LMLoss<S> loss(const Prompt<S>& prompt, const std::vector<int>& target) const {
    detail::check_lm_inputs(prompt, target);
    LMCache<S> c;
    LMLoss<S> out;
    out.logits = detail::lm_forward(params_, prompt, drop_last(target), c);
    out.loss = detail::target_loss<S>(out.logits, prompt.length(), target, nullptr);
    return out;
  }

  // Gradient of `scale * loss` w.r.t. every soft segment.
  LMInputGradient<S> input_gradient(const Prompt<S>& prompt, const std::vector<int>& target, double scale = 1.0) const {
    detail::check_lm_inputs(prompt, target);
    LMCache<S> c;
    const nn::Mat<S> logits = detail::lm_forward(params_, prompt, drop_last(target), c);
    nn::Mat<S> dlogits;
    LMInputGradient<S> out;
    out.loss = detail::target_loss<S>(logits, prompt.length(), target, &dlogits, scale);
    const nn::Mat<S> dx = detail::lm_backward<S>(params_, c, dlogits, nullptr);
    out.soft = detail::split_soft_gradients(prompt, dx);
    return out;
  }

  // Greedy decoding; ties go to the lowest id. The <eos> token, when produced,
  // is the last element.
  std::vector<int> generate(const Prompt<S>& prompt, int max_len) const {
    if (max_len < 1) throw DomainError("max_len must be at least 1");
    if (prompt.length() == 0) throw DomainError("language model prompt must be non-empty");
    std::vector<int> out;
    LMCache<S> c;
    for (int step = 0; step < max_len; ++step) {
      const nn::Mat<S> logits = detail::lm_forward(params_, prompt, out, c);
      const auto last = logits.row(logits.rows() - 1);
      int best = 0;
      for (int v = 1; v < last.cols(); ++v)
        if (last(v) > last(best)) best = v;
      out.push_back(best);
      if (best == PointTokenVocab::kEos) break;
    }
    return out;
  }

 private:
  static std::vector<int> drop_last(const std::vector<int>& t) { return {t.begin(), t.end() - 1}; }

  LMParams<S> params_;
  std::uint64_t checksum_ = 0;
};

}  // namespace regionvlm
