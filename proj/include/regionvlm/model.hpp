#pragma once

// A complete region-aware captioner: vocabulary, frozen visual encoder,
// trainable query transformer and the sealed language model, plus the
// checkpoint mapping for all of it.

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "regionvlm/checkpoint.hpp"
#include "regionvlm/frozen_lm.hpp"
#include "regionvlm/prompts.hpp"
#include "regionvlm/qformer.hpp"
#include "regionvlm/visual_encoder.hpp"
#include "regionvlm/vocabulary.hpp"

namespace regionvlm {

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

inline std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

struct RegionModel {
  Vocabulary vocab;
  VisualEncoder encoder;
  QFormerParams<float> qformer;
  FrozenLM<float> lm;
  int k = 10;
  nlohmann::json metadata = nlohmann::json::object();

  // K points -> "[x y] ..." -> point-token ids.
  static std::vector<int> point_tokens(const std::vector<Point2D>& points) {
    return tokenize_points(encode_points(points));
  }

  QFormerOutput<float> encode_region(const SyntheticImage& image, const std::vector<int>& tokens) const {
    return qformer_forward(qformer, tokens, encoder.encode<float>(image));
  }
};

inline nlohmann::json qformer_config_json(const QFormerConfig& c) {
  return {{"num_queries", c.num_queries}, {"d_model", c.d_model}, {"d_visual", c.d_visual},  {"d_out", c.d_out},
          {"layers", c.layers},           {"heads", c.heads},     {"ffn_hidden", c.ffn_hidden}, {"max_point_tokens", c.max_point_tokens}};
}

inline QFormerConfig qformer_config_from_json(const nlohmann::json& j) {
  QFormerConfig c;
  c.num_queries = j.at("num_queries");
  c.d_model = j.at("d_model");
  c.d_visual = j.at("d_visual");
  c.d_out = j.at("d_out");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ffn_hidden = j.at("ffn_hidden");
  c.max_point_tokens = j.at("max_point_tokens");
  c.validate();
  return c;
}

inline nlohmann::json lm_config_json(const LMConfig& c) {
  return {{"vocab", c.vocab}, {"d_model", c.d_model}, {"layers", c.layers}, {"heads", c.heads},
          {"ffn_hidden", c.ffn_hidden}, {"context", c.context}};
}

inline LMConfig lm_config_from_json(const nlohmann::json& j) {
  LMConfig c;
  c.vocab = j.at("vocab");
  c.d_model = j.at("d_model");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ffn_hidden = j.at("ffn_hidden");
  c.context = j.at("context");
  c.validate();
  return c;
}

namespace detail {

template <class Params>
void append_tensors(const std::string& prefix, const Params& p, std::vector<NamedTensor>& out) {
  const_cast<Params&>(p).visit([&](const std::string& name, nn::Mat<float>& m) { out.push_back({prefix + name, m}); });
}

template <class Params>
void fill_tensors(const std::string& prefix, Params& p, const std::vector<NamedTensor>& src, std::size_t& idx) {
  p.visit([&](const std::string& name, nn::Mat<float>& m) {
    if (idx >= src.size()) throw ShapeError("checkpoint is missing tensor " + prefix + name);
    const auto& t = src[idx++];
    if (t.name != prefix + name) throw ShapeError("checkpoint tensor order mismatch: got " + t.name + ", expected " + prefix + name);
    if (t.value.rows() != m.rows() || t.value.cols() != m.cols())
      throw ShapeError("checkpoint shape mismatch for " + t.name + ": stored " + std::to_string(t.value.rows()) + "x" +
                       std::to_string(t.value.cols()) + ", expected " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()));
    m = t.value;
  });
}

}  // namespace detail

inline std::string serialize_model(const RegionModel& m) {
  const auto& enc = m.encoder.config();
  nlohmann::json header = {
      {"format", "regionvlm-checkpoint"},
      {"kind", "model"},
      {"k", m.k},
      {"vocab", m.vocab.words()},
      {"encoder",
       {{"d_v", enc.d_v}, {"colors", enc.colors}, {"shapes", enc.shapes}, {"seed", enc.seed}, {"checksum", hex64(m.encoder.checksum())}}},
      {"qformer", qformer_config_json(m.qformer.config)},
      {"lm", lm_config_json(m.lm.config())},
      {"lm_seal_checksum", hex64(m.lm.seal_checksum())},
      {"metadata", m.metadata},
  };
  std::vector<NamedTensor> tensors;
  detail::append_tensors("qformer/", m.qformer, tensors);
  detail::append_tensors("lm/", m.lm.params(), tensors);
  return serialize_checkpoint(std::move(header), tensors);
}

// With `expected`, a checkpoint whose query-transformer shape differs is
// rejected with ShapeError.
inline RegionModel deserialize_model(const std::string& bytes, const std::optional<QFormerConfig>& expected = std::nullopt) {
  const CheckpointData data = deserialize_checkpoint(bytes);
  const auto& h = data.header;
  if (h.value("kind", std::string{}) != "model") throw ChecksumError("checkpoint is not a model bundle");

  RegionModel m;
  m.k = h.at("k");
  m.vocab = Vocabulary(h.at("vocab").get<std::vector<std::string>>());
  const auto& e = h.at("encoder");
  m.encoder = VisualEncoder({e.at("d_v").get<int>(), e.at("colors").get<std::vector<std::string>>(),
                             e.at("shapes").get<std::vector<std::string>>(), e.at("seed").get<std::uint64_t>()});
  if (hex64(m.encoder.checksum()) != e.at("checksum").get<std::string>())
    throw ChecksumError("visual encoder does not reproduce its recorded checksum");

  const QFormerConfig qcfg = qformer_config_from_json(h.at("qformer"));
  if (expected && !(*expected == qcfg))
    throw ShapeError("checkpoint query transformer shape mismatch (stored N=" + std::to_string(qcfg.num_queries) +
                     ", expected N=" + std::to_string(expected->num_queries) + ")");
  const LMConfig lcfg = lm_config_from_json(h.at("lm"));
  if (lcfg.vocab != m.vocab.size()) throw ShapeError("language model vocabulary size does not match the stored vocabulary");

  std::size_t idx = 0;
  m.qformer = QFormerParams<float>::zeros(qcfg);
  detail::fill_tensors("qformer/", m.qformer, data.tensors, idx);
  LMParams<float> lp = LMParams<float>::zeros(lcfg);
  detail::fill_tensors("lm/", lp, data.tensors, idx);
  if (idx != data.tensors.size()) throw ShapeError("checkpoint has unexpected extra tensors");
  m.lm = FrozenLM<float>(std::move(lp));
  if (hex64(m.lm.seal_checksum()) != h.at("lm_seal_checksum").get<std::string>())
    throw ChecksumError("language model seal checksum mismatch");
  m.metadata = h.value("metadata", nlohmann::json::object());
  return m;
}

inline void save_model(const std::string& path, const RegionModel& m) { write_file(path, serialize_model(m)); }

inline RegionModel load_model(const std::string& path, const std::optional<QFormerConfig>& expected = std::nullopt) {
  return deserialize_model(read_file(path), expected);
}

}  // namespace regionvlm

namespace regionvlm {

inline std::string serialize_frozen_lm(const FrozenLM<float>& lm, const Vocabulary& vocab) {
  nlohmann::json header = {{"format", "regionvlm-checkpoint"},
                           {"kind", "frozen_lm"},
                           {"vocab", vocab.words()},
                           {"lm", lm_config_json(lm.config())},
                           {"lm_seal_checksum", hex64(lm.seal_checksum())}};
  std::vector<NamedTensor> tensors;
  detail::append_tensors("lm/", lm.params(), tensors);
  return serialize_checkpoint(std::move(header), tensors);
}

struct SealedLM {
  FrozenLM<float> lm;
  Vocabulary vocab;
};

inline SealedLM deserialize_frozen_lm(const std::string& bytes) {
  const CheckpointData data = deserialize_checkpoint(bytes);
  const auto& h = data.header;
  if (h.value("kind", std::string{}) != "frozen_lm") throw ChecksumError("checkpoint is not a sealed language model");
  SealedLM out;
  out.vocab = Vocabulary(h.at("vocab").get<std::vector<std::string>>());
  const LMConfig cfg = lm_config_from_json(h.at("lm"));
  LMParams<float> p = LMParams<float>::zeros(cfg);
  std::size_t idx = 0;
  detail::fill_tensors("lm/", p, data.tensors, idx);
  out.lm = FrozenLM<float>(std::move(p));
  if (hex64(out.lm.seal_checksum()) != h.at("lm_seal_checksum").get<std::string>())
    throw ChecksumError("language model seal checksum mismatch");
  return out;
}

}  // namespace regionvlm
