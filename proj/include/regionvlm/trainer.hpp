#pragma once

// Trains the query transformer (and its output projection) against the sealed
// language model on mixed regional/global batches. Nothing else moves: the
// visual encoder has no trainable state and the language model exposes no
// parameter gradients.

#include <chrono>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "regionvlm/batching.hpp"
#include "regionvlm/lm_warmup.hpp"
#include "regionvlm/model.hpp"
#include "regionvlm/optimizer.hpp"
#include "regionvlm/synthetic.hpp"

namespace regionvlm {

struct TrainConfig {
  // Schedule. max_steps > 0 overrides epochs.
  int epochs = 6;
  int max_steps = 0;
  int batch_size = 32;
  int k = 10;
  std::uint64_t seed = 1234;
  bool drop_points = false;  // ablation: regional items lose their point tokens
  AdamConfig adam{3e-3};

  // Data.
  int num_images = 2000;
  int eval_images = 200;
  int grid = 6;
  std::vector<std::string> colors = {"red", "green", "blue", "yellow"};
  std::vector<std::string> shapes = {"circle", "square", "triangle", "star"};
  int min_objects = 2;
  int max_objects = 4;

  // Model.
  QFormerConfig qformer{};
  int lm_d_model = 32;
  int lm_layers = 2;
  int lm_heads = 2;
  int lm_ffn_hidden = 128;
  int lm_context = 128;
  int visual_dim = 16;
  WarmupConfig warmup{};

  void validate() const {
    if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be even and at least 2");
    if (k < 1) throw ConfigError("k must be at least 1");
    if (!(adam.lr > 0)) throw ConfigError("learning_rate must be positive");
    if (epochs < 1 && max_steps < 1) throw ConfigError("need epochs >= 1 or max_steps >= 1");
    if (num_images < 1) throw ConfigError("num_images must be positive");
    if (4 * k > qformer.max_point_tokens) throw ConfigError("k too large for max_point_tokens");
    qformer.validate();
  }

  SyntheticConfig data_config(bool held_out = false) const {
    SyntheticConfig c;
    c.grid = grid;
    c.colors = colors;
    c.shapes = shapes;
    c.min_objects = min_objects;
    c.max_objects = max_objects;
    c.num_images = held_out ? eval_images : num_images;
    c.seed = derive_seed(seed, held_out ? 2 : 1);
    return c;
  }
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto b = item.find_first_not_of(' '); b != std::string::npos) out.push_back(item.substr(b, item.find_last_not_of(' ') - b + 1));
  return out;
}

// Flat "key = value" text; '#' starts a comment. Unknown keys are errors.
inline TrainConfig parse_train_config(std::istream& in) {
  TrainConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string{};
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw ParseError("config line without '='", lineno);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      auto as_int = [&] { return std::stoi(val); };
      auto as_double = [&] { return std::stod(val); };
      auto as_bool = [&] {
        if (val == "true" || val == "1") return true;
        if (val == "false" || val == "0") return false;
        throw ConfigError("expected a boolean");
      };
      if (key == "epochs") c.epochs = as_int();
      else if (key == "max_steps") c.max_steps = as_int();
      else if (key == "batch_size") c.batch_size = as_int();
      else if (key == "k") c.k = as_int();
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "drop_points") c.drop_points = as_bool();
      else if (key == "learning_rate") c.adam.lr = as_double();
      else if (key == "adam_beta1") c.adam.beta1 = as_double();
      else if (key == "adam_beta2") c.adam.beta2 = as_double();
      else if (key == "adam_eps") c.adam.eps = as_double();
      else if (key == "weight_decay") c.adam.weight_decay = as_double();
      else if (key == "clip_norm") c.adam.clip_norm = as_double();
      else if (key == "num_images") c.num_images = as_int();
      else if (key == "eval_images") c.eval_images = as_int();
      else if (key == "grid") c.grid = as_int();
      else if (key == "colors") c.colors = split_list(val);
      else if (key == "shapes") c.shapes = split_list(val);
      else if (key == "min_objects") c.min_objects = as_int();
      else if (key == "max_objects") c.max_objects = as_int();
      else if (key == "num_queries") c.qformer.num_queries = as_int();
      else if (key == "qformer_dim") c.qformer.d_model = as_int();
      else if (key == "qformer_layers") c.qformer.layers = as_int();
      else if (key == "qformer_heads") c.qformer.heads = as_int();
      else if (key == "qformer_ffn_hidden") c.qformer.ffn_hidden = as_int();
      else if (key == "max_point_tokens") c.qformer.max_point_tokens = as_int();
      else if (key == "visual_dim") c.visual_dim = as_int();
      else if (key == "lm_dim") c.lm_d_model = as_int();
      else if (key == "lm_layers") c.lm_layers = as_int();
      else if (key == "lm_heads") c.lm_heads = as_int();
      else if (key == "lm_ffn_hidden") c.lm_ffn_hidden = as_int();
      else if (key == "lm_context") c.lm_context = as_int();
      else if (key == "lm_warmup_steps") c.warmup.steps = as_int();
      else if (key == "lm_warmup_batch") c.warmup.batch = as_int();
      else if (key == "lm_warmup_lr") c.warmup.lr = as_double();
      else throw ConfigError("unknown key");
    } catch (const ConfigError& e) {
      throw ParseError("config key '" + key + "': " + e.what(), lineno);
    } catch (const std::logic_error&) {
      throw ParseError("config key '" + key + "': bad value '" + val + "'", lineno);
    }
  }
  c.qformer.d_visual = c.visual_dim;
  c.qformer.d_out = c.lm_d_model;
  c.validate();
  return c;
}

struct StepRecord {
  int step = 0;
  double loss = 0;
  double loss_regional = 0;
  double loss_global = 0;
  double grad_norm = 0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_eval_loss;
  double wall_seconds = 0;
  std::uint64_t lm_checksum_before = 0;
  std::uint64_t lm_checksum_after = 0;
  std::uint64_t encoder_checksum_before = 0;
  std::uint64_t encoder_checksum_after = 0;
};

inline std::string format_step(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "{\"step\":%d,\"loss\":%.9g,\"loss_regional\":%.9g,\"loss_global\":%.9g,\"grad_norm\":%.9g}", r.step,
                r.loss, r.loss_regional, r.loss_global, r.grad_norm);
  return buf;
}

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything the training loop reads: model scaffolding plus encoded data.
struct TrainingSetup {
  RegionModel model;
  SyntheticDataset train;
  SyntheticDataset held_out;
  std::vector<ImageFeatures<float>> train_features;
  std::vector<ImageFeatures<float>> held_out_features;
};

inline std::vector<TrainingExample> to_examples(const std::vector<SyntheticPair>& pairs, const Vocabulary& vocab) {
  std::vector<TrainingExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.image, p.pair.scribble, with_eos(vocab.encode(p.pair.text))});
  return out;
}

inline Vocabulary vocabulary_for(const TrainConfig& cfg) { return build_vocab(model_corpus(cfg.data_config()), 10000); }

inline LMConfig lm_config_for(const TrainConfig& cfg, const Vocabulary& vocab) {
  LMConfig l;
  l.vocab = vocab.size();
  l.d_model = cfg.lm_d_model;
  l.layers = cfg.lm_layers;
  l.heads = cfg.lm_heads;
  l.ffn_hidden = cfg.lm_ffn_hidden;
  l.context = cfg.lm_context;
  return l;
}

inline FrozenLM<float> build_frozen_lm(const TrainConfig& cfg, const Vocabulary& vocab, WarmupReport* report = nullptr) {
  WarmupConfig w = cfg.warmup;
  w.seed = derive_seed(cfg.seed, 3);
  return warm_and_seal(lm_config_for(cfg, vocab), w, cfg.data_config(), vocab, report);
}

// `lm` lets several runs (e.g. a model and its ablation) share one sealed
// language model; it must have been built for the same vocabulary.
inline TrainingSetup prepare_training(const TrainConfig& cfg, std::optional<FrozenLM<float>> lm = std::nullopt) {
  cfg.validate();
  TrainingSetup s;
  auto& m = s.model;
  m.k = cfg.k;
  m.vocab = vocabulary_for(cfg);
  m.encoder = VisualEncoder({cfg.visual_dim, cfg.colors, cfg.shapes, derive_seed(cfg.seed, 4)});
  m.lm = lm ? std::move(*lm) : build_frozen_lm(cfg, m.vocab);
  if (m.lm.config().vocab != m.vocab.size()) throw ConfigError("supplied language model has a different vocabulary");
  QFormerConfig q = cfg.qformer;
  q.d_visual = cfg.visual_dim;
  q.d_out = m.lm.config().d_model;
  Rng init(derive_seed(cfg.seed, 5));
  m.qformer = QFormerParams<float>::init(q, init);
  m.metadata = {{"seed", cfg.seed}, {"drop_points", cfg.drop_points}, {"data", synthetic_manifest(cfg.data_config(true))}};

  s.train = make_synthetic_dataset(cfg.data_config());
  s.held_out = make_synthetic_dataset(cfg.data_config(true));
  for (const auto& img : s.train.images) s.train_features.push_back(m.encoder.encode<float>(img));
  for (const auto& img : s.held_out.images) s.held_out_features.push_back(m.encoder.encode<float>(img));
  return s;
}

// Forward + input-gradient + backward for one item; returns its LM loss.
inline double accumulate_item(const RegionModel& m, const ImageFeatures<float>& features, const std::vector<int>& tokens,
                              const std::vector<int>& target, double scale, QFormerParams<float>& grads) {
  QFormerCache<float> cache;
  const auto out = qformer_forward(m.qformer, tokens, features, &cache);
  const auto prompt = prompts::caption<float>(SoftSegment<float>{out.z_hat});
  const auto g = m.lm.input_gradient(prompt, target, scale);
  qformer_backward(m.qformer, cache, g.soft.front(), grads);
  return g.loss;
}

inline double item_loss(const RegionModel& m, const ImageFeatures<float>& features, const std::vector<int>& tokens,
                        const std::vector<int>& target) {
  const auto out = qformer_forward(m.qformer, tokens, features);
  return m.lm.loss(prompts::caption<float>(SoftSegment<float>{out.z_hat}), target).loss;
}

struct EvalExample {
  const ImageFeatures<float>* features;
  std::vector<int> tokens;
  std::vector<int> target;
};

inline double eval_loss(const RegionModel& m, const std::vector<EvalExample>& data) {
  if (data.empty()) throw DomainError("eval_loss of an empty dataset");
  double total = 0;
  for (const auto& e : data) total += item_loss(m, *e.features, e.tokens, e.target);
  return total / static_cast<double>(data.size());
}

// Held-out regional + global examples with per-item point seeds.
inline std::vector<EvalExample> eval_examples(const TrainingSetup& s, std::uint64_t seed) {
  std::vector<EvalExample> out;
  std::size_t id = 0;
  for (const auto* pairs : {&s.held_out.regional, &s.held_out.global})
    for (const auto& p : *pairs) {
      Rng rng(derive_seed(seed, id++));
      out.push_back({&s.held_out_features[p.image], scribble_tokens(p.pair.scribble, s.model.k, rng),
                     with_eos(s.model.vocab.encode(p.pair.text))});
    }
  return out;
}

using EpochCallback = std::function<void(int epoch, double eval_loss, const RegionModel&)>;

inline TrainReport train(TrainingSetup& s, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  auto& m = s.model;
  TrainReport report;
  report.lm_checksum_before = params_checksum(m.lm.params());
  report.encoder_checksum_before = m.encoder.checksum();
  const auto t0 = std::chrono::steady_clock::now();

  MixedBatchSampler sampler(to_examples(s.train.regional, m.vocab), to_examples(s.train.global, m.vocab), cfg.batch_size,
                            cfg.k, derive_seed(cfg.seed, 6), cfg.drop_points);
  const int per_epoch = static_cast<int>(sampler.steps_per_epoch());
  const int total = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * per_epoch;
  const auto held_out = eval_examples(s, derive_seed(cfg.seed, 7));

  QFormerParams<float> grads = QFormerParams<float>::zeros(m.qformer.config);
  auto plist = nn::tensor_list<float>(m.qformer);
  auto glist = nn::tensor_list<float>(grads);
  Adam<float> opt(cfg.adam, plist);
  const double scale = 1.0 / cfg.batch_size;

  for (int step = 1; step <= total; ++step) {
    for (auto* g : glist) g->setZero();
    const TrainingBatch batch = sampler.next();
    double reg = 0, glob = 0;
    int nreg = 0, nglob = 0;
    for (const auto& item : batch.items) {
      const std::vector<int>& tokens = item.point_tokens;
      const double l = accumulate_item(m, s.train_features[item.image], tokens, item.target, scale, grads);
      if (item.origin == Origin::kRegional) {
        reg += l;
        ++nreg;
      } else {
        glob += l;
        ++nglob;
      }
    }
    StepRecord rec;
    rec.step = step;
    rec.loss_regional = reg / nreg;
    rec.loss_global = glob / nglob;
    rec.loss = (reg + glob) / (nreg + nglob);
    if (!std::isfinite(rec.loss)) {
      throw TrainingDiverged("non-finite loss at step " + std::to_string(step) + " (regional " +
                             std::to_string(rec.loss_regional) + ", global " + std::to_string(rec.loss_global) + ")");
    }
    rec.grad_norm = opt.step(plist, glist);
    report.steps.push_back(rec);
    if (step % per_epoch == 0 || step == total) {
      const double el = eval_loss(m, held_out);
      report.epoch_eval_loss.push_back(el);
      if (on_epoch) on_epoch(static_cast<int>(report.epoch_eval_loss.size()), el, m);
    }
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.lm_checksum_after = params_checksum(m.lm.params());
  report.encoder_checksum_after = m.encoder.checksum();
  return report;
}

// ---------------------------------------------------------------- held-out measurements

struct HeldOutAccuracy {
  double regional = 0;  // greedy token accuracy on region captions
  double global = 0;    // same, whole-image captions
};

// Position-wise token accuracy of greedy captions against the references.
// With use_points off the region queries see no point tokens.
inline HeldOutAccuracy held_out_accuracy(const TrainingSetup& s, std::uint64_t seed, bool use_points = true) {
  const auto& m = s.model;
  auto score = [&](const std::vector<SyntheticPair>& pairs, bool points, std::uint64_t stream) {
    std::size_t hits = 0, total = 0;
    std::size_t id = 0;
    for (const auto& p : pairs) {
      Rng rng(derive_seed(stream, id++));
      const auto tokens = points ? scribble_tokens(p.pair.scribble, m.k, rng) : std::vector<int>{};
      const auto ref = m.vocab.encode(p.pair.text);
      const auto out = qformer_forward(m.qformer, tokens, s.held_out_features[p.image]);
      const auto gen = m.lm.generate(prompts::caption<float>(SoftSegment<float>{out.z_hat}), static_cast<int>(ref.size()) + 1);
      for (std::size_t i = 0; i < ref.size(); ++i) hits += i < gen.size() && gen[i] == ref[i];
      total += ref.size();
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
  };
  return {score(s.held_out.regional, use_points, derive_seed(seed, 1)), score(s.held_out.global, false, derive_seed(seed, 2))};
}

struct AttentionGrounding {
  double object_mass = 0;    // mean cross-attention mass on the object's patches
  double area_fraction = 0;  // mean share of patches the object covers
  double ratio() const { return area_fraction > 0 ? object_mass / area_fraction : 0.0; }
};

// Query-averaged cross-attention (mean over layers and heads) for each
// held-out region pair.
inline AttentionGrounding attention_grounding(const TrainingSetup& s, std::uint64_t seed) {
  const auto& m = s.model;
  AttentionGrounding g;
  std::size_t n = 0, id = 0;
  for (const auto& p : s.held_out.regional) {
    Rng rng(derive_seed(seed, id++));
    const auto out = qformer_forward(m.qformer, scribble_tokens(p.pair.scribble, m.k, rng), s.held_out_features[p.image]);
    const auto map = cross_attention_map(out);
    const GridMask mask = s.held_out.images[p.image].object_mask(static_cast<std::size_t>(p.object));
    double mass = 0;
    for (std::size_t cell : mask.set_cells()) mass += map.weights.col(static_cast<Eigen::Index>(cell)).mean();
    g.object_mass += mass;
    g.area_fraction += static_cast<double>(mask.count()) / static_cast<double>(mask.size());
    ++n;
  }
  if (n == 0) throw DomainError("no held-out region pairs");
  g.object_mass /= static_cast<double>(n);
  g.area_fraction /= static_cast<double>(n);
  return g;
}

}  // namespace regionvlm
