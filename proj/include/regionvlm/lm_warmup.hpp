#pragma once

// Builds the stand-in language model: seeded random init, a short pass of
// ordinary language-model training on text-only episodes drawn from the
// synthetic caption grammar, then sealing. In every episode the region
// context is the caption text itself, laid out exactly as the soft prompts
// are laid out later (captioning, question answering, multi-turn, indexed
// multiple choice).

#include <string>
#include <vector>

#include "regionvlm/frozen_lm.hpp"
#include "regionvlm/optimizer.hpp"
#include "regionvlm/prompts.hpp"
#include "regionvlm/synthetic.hpp"
#include "regionvlm/vocabulary.hpp"

namespace regionvlm {

struct WarmupConfig {
  int steps = 1500;
  int batch = 16;
  double lr = 3e-3;
  std::uint64_t seed = 11;
};

struct TextEpisode {
  Prompt<float> prompt;  // text segments only
  std::vector<int> target;
};

inline std::string color_question(const std::string& shape) { return "what color is the " + shape; }
inline std::string shape_question(const std::string& color) { return "what shape is the " + color + " one"; }
inline std::string vcr_question(std::size_t k) { return "what is [" + std::to_string(k) + "] ?"; }

// Every text the model can see, for vocabulary construction.
inline std::vector<std::string> model_corpus(const SyntheticConfig& cfg) {
  std::vector<std::string> corpus;
  for (const auto& c : cfg.colors)
    for (const auto& s : cfg.shapes) corpus.push_back(c + " " + s + " and");
  for (const auto& s : cfg.shapes) corpus.push_back(prompts::vqa_text(color_question(s)));
  for (const auto& c : cfg.colors) corpus.push_back(prompts::vqa_text(shape_question(c)));
  corpus.push_back(prompts::vcr_tail(vcr_question(0), {"a", "b", "c", "d"}));
  return corpus;
}

inline std::vector<int> with_eos(std::vector<int> ids) {
  ids.push_back(PointTokenVocab::kEos);
  return ids;
}

inline TextEpisode sample_text_episode(const SyntheticConfig& cfg, const Vocabulary& vocab, Rng& rng) {
  const SyntheticImage img = random_image(cfg, "warmup", rng);
  const auto text = [&](const std::string& s) { return PromptSegment<float>{TextSegment{vocab.encode(s)}}; };
  const auto pick = [&](std::size_t n) { return static_cast<std::size_t>(uniform_index(rng, n)); };
  const std::size_t n = img.objects.size();
  const double u = uniform01(rng);

  TextEpisode ep;
  if (u < 0.30) {
    const auto& o = img.objects[pick(n)];
    ep.prompt = prompts::caption(text(o.caption()));
    ep.target = with_eos(vocab.encode(o.caption()));
  } else if (u < 0.50) {
    ep.prompt = prompts::caption(text(img.global_caption()));
    ep.target = with_eos(vocab.encode(img.global_caption()));
  } else if (u < 0.70) {
    const auto& o = img.objects[pick(n)];
    const bool ask_color = uniform01(rng) < 0.5;
    const auto ctx = text(img.global_caption());
    ep.prompt = prompts::vqa(ctx, ask_color ? color_question(o.shape) : shape_question(o.color), vocab);
    ep.target = with_eos(vocab.encode(ask_color ? o.color : o.shape));
  } else if (u < 0.85) {
    // Two dialogue turns; only the second reply is scored.
    const auto& a = img.objects[pick(n)];
    const auto& b = img.objects[pick(n)];
    ep.prompt = prompts::caption(text(a.caption()));
    ep.prompt.text(with_eos(vocab.encode(a.caption())));
    ep.prompt.text(vocab.encode(b.caption()));
    ep.prompt.text({PointTokenVocab::kBos});
    ep.target = with_eos(vocab.encode(b.caption()));
  } else {
    std::vector<PromptSegment<float>> objects;
    for (const auto& o : img.objects) objects.push_back(text(o.caption()));
    const std::size_t asked = pick(n);
    std::vector<std::string> choices;
    for (const auto& o : img.objects) choices.push_back(o.caption());
    while (choices.size() < 4) {
      const std::string c = cfg.colors[pick(cfg.colors.size())] + " " + cfg.shapes[pick(cfg.shapes.size())];
      if (std::find(choices.begin(), choices.end(), c) == choices.end()) choices.push_back(c);
    }
    choices.resize(4);
    const std::string answer = img.objects[asked].caption();
    if (std::find(choices.begin(), choices.end(), answer) == choices.end()) choices[0] = answer;
    shuffle(choices, rng);
    ep.prompt = prompts::vcr(objects, vcr_question(asked), choices, vocab);
    ep.target = with_eos(vocab.encode(answer));
  }
  return ep;
}

struct WarmupReport {
  double first_loss = 0;  // mean over the first 50 steps
  double last_loss = 0;   // mean over the last 50 steps
};

inline FrozenLM<float> warm_and_seal(const LMConfig& lm_cfg, const WarmupConfig& wcfg, const SyntheticConfig& data_cfg,
                                     const Vocabulary& vocab, WarmupReport* report = nullptr) {
  Rng init_rng(derive_seed(wcfg.seed, 1));
  LMParams<float> params = LMParams<float>::init(lm_cfg, init_rng);
  if (wcfg.steps <= 0) return FrozenLM<float>(std::move(params));

  LMParams<float> grads = LMParams<float>::zeros(lm_cfg);
  auto plist = nn::tensor_list<float>(params);
  auto glist = nn::tensor_list<float>(grads);
  Adam<float> opt({wcfg.lr}, plist);
  Rng rng(derive_seed(wcfg.seed, 2));
  std::vector<double> losses;
  for (int step = 0; step < wcfg.steps; ++step) {
    for (auto* g : glist) g->setZero();
    double loss = 0;
    for (int b = 0; b < wcfg.batch; ++b) {
      const TextEpisode ep = sample_text_episode(data_cfg, vocab, rng);
      LMCache<float> cache;
      const std::vector<int> cont(ep.target.begin(), ep.target.end() - 1);
      const nn::Mat<float> logits = detail::lm_forward(params, ep.prompt, cont, cache);
      nn::Mat<float> dlogits;
      loss += detail::target_loss<float>(logits, ep.prompt.length(), ep.target, &dlogits, 1.0 / wcfg.batch);
      detail::lm_backward<float>(params, cache, dlogits, &grads);
    }
    opt.step(plist, glist);
    losses.push_back(loss / wcfg.batch);
  }
  if (report) {
    const std::size_t w = std::min<std::size_t>(50, losses.size());
    for (std::size_t i = 0; i < w; ++i) {
      report->first_loss += losses[i] / static_cast<double>(w);
      report->last_loss += losses[losses.size() - 1 - i] / static_cast<double>(w);
    }
  }
  return FrozenLM<float>(std::move(params));
}

}  // namespace regionvlm
