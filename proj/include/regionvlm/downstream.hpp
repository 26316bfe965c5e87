#pragma once

// Zero-shot procedures on a trained model: region captioning, referring
// segmentation by proposal scoring, multiple-choice reasoning over indexed
// regions, question answering on the whole image, and multi-turn dialogue.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "regionvlm/mask.hpp"
#include "regionvlm/lm_warmup.hpp"
#include "regionvlm/model.hpp"
#include "regionvlm/prompts.hpp"

namespace regionvlm {

inline constexpr int kDefaultMaxCaptionTokens = 16;

inline nn::Mat<float> region_soft_prompt(const RegionModel& m, const SyntheticImage& image, const std::vector<Point2D>& points) {
  return m.encode_region(image, RegionModel::point_tokens(points)).z_hat;
}

// ---------------------------------------------------------------- captioning

// Points actually fed to the model for a scribble: K samples, or none.
inline std::vector<Point2D> scribble_points(const RegionModel& m, const Scribble& scribble, Rng& rng, int k = 0) {
  if (scribble.empty()) return {};
  return sample_points(scribble, k > 0 ? k : m.k, rng);
}

// An empty scribble gives the whole-image caption.
inline std::string caption_points(const RegionModel& m, const SyntheticImage& image, const std::vector<Point2D>& points,
                                  int max_tokens = kDefaultMaxCaptionTokens) {
  const auto z = region_soft_prompt(m, image, points);
  return m.vocab.decode(m.lm.generate(prompts::caption<float>(SoftSegment<float>{z}), max_tokens));
}

inline std::string caption_region(const RegionModel& m, const SyntheticImage& image, const Scribble& scribble, Rng& rng,
                                  int max_tokens = kDefaultMaxCaptionTokens, int k = 0) {
  return caption_points(m, image, scribble_points(m, scribble, rng, k), max_tokens);
}

// ---------------------------------------------------------------- referring segmentation

// Points for a proposal depend on (seed, mask contents) only, so a proposal's
// score does not change when the proposal list is reordered.
inline std::uint64_t mask_seed(std::uint64_t seed, const GridMask& mask) {
  std::vector<std::uint8_t> bits(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bits[i] = mask[i] ? 1 : 0;
  const std::int32_t dims[2] = {mask.rows(), mask.cols()};
  return derive_seed(seed, fnv1a_values(dims, 2, fnv1a(bits.data(), bits.size())));
}

// Per-instance stream keyed by the instance id, not its position in a file.
inline std::uint64_t instance_seed(std::uint64_t seed, const std::string& id) { return derive_seed(seed, fnv1a(id)); }

// LM loss of the description given the region; +inf for an empty proposal.
inline double ris_score(const RegionModel& m, const SyntheticImage& image, const GridMask& proposal,
                        const std::string& description, std::uint64_t seed) {
  if (proposal.empty()) return std::numeric_limits<double>::infinity();
  Rng rng(mask_seed(seed, proposal));
  const auto z = region_soft_prompt(m, image, sample_points_in_mask(proposal, m.k, rng));
  const auto target = with_eos(m.vocab.encode(description));
  return m.lm.loss(prompts::caption<float>(SoftSegment<float>{z}), target).loss;
}

// Lowest score wins; ties go to the lowest index.
inline std::size_t argmin_index(const std::vector<double>& scores) {
  if (scores.empty()) throw DomainError("argmin of an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] < scores[best]) best = i;
  return best;
}

struct RISInstance {
  std::string id;
  SyntheticImage image;
  std::vector<GridMask> proposals;
  std::string description;
  std::optional<GridMask> ground_truth;
};

struct RISSelection {
  std::size_t index = 0;
  std::vector<double> scores;
};

inline RISSelection ris_select(const RegionModel& m, const RISInstance& inst, std::uint64_t seed) {
  if (inst.proposals.empty()) throw DomainError("RIS instance has no proposals");
  RISSelection sel;
  for (const auto& p : inst.proposals) sel.scores.push_back(ris_score(m, inst.image, p, inst.description, seed));
  if (std::none_of(sel.scores.begin(), sel.scores.end(), [](double s) { return std::isfinite(s); }))
    throw DomainError("RIS instance has no usable (non-empty) proposal");
  sel.index = argmin_index(sel.scores);
  return sel;
}

struct RobustnessRow {
  int radius = 0;
  double miou = 0;
};

// Proposals are dilated before points are sampled from them; the selected
// index is scored with its undilated proposal against the ground truth.
inline std::vector<RobustnessRow> robustness_report(const RegionModel& m, const std::vector<RISInstance>& instances,
                                                    std::vector<int> radii, std::uint64_t seed) {
  std::sort(radii.begin(), radii.end());
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
  std::vector<RobustnessRow> rows;
  for (int r : radii) {
    std::vector<GridMask> pred, truth;
    for (const auto& inst : instances) {
      if (!inst.ground_truth) throw DomainError("robustness report needs ground-truth masks (instance " + inst.id + ")");
      RISInstance noisy = inst;
      for (auto& p : noisy.proposals) p = dilate_mask(p, r);
      const auto sel = ris_select(m, noisy, instance_seed(seed, inst.id));
      pred.push_back(inst.proposals[sel.index]);
      truth.push_back(*inst.ground_truth);
    }
    rows.push_back({r, compute_miou(pred, truth)});
  }
  return rows;
}

// ---------------------------------------------------------------- visual commonsense reasoning

struct VCRInstance {
  std::string id;
  SyntheticImage image;
  std::vector<GridMask> objects;
  std::string question;
  std::vector<std::string> choices;  // exactly 4
  std::optional<int> answer;         // 1..4
};

// Every "[k]" in the text must name an existing object.
inline void check_placeholders(const std::string& text, std::size_t objects) {
  static const std::regex placeholder(R"(\[(\d+)\])");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), placeholder); it != std::sregex_iterator(); ++it) {
    const auto k = std::stoul((*it)[1].str());
    if (k >= objects) throw DomainError("placeholder [" + std::to_string(k) + "] has no matching object");
  }
}

inline Prompt<float> vcr_prompt(const std::vector<nn::Mat<float>>& objects, const std::string& question,
                                const std::vector<std::string>& choices, const Vocabulary& vocab) {
  check_placeholders(question, objects.size());
  for (const auto& c : choices) check_placeholders(c, objects.size());
  std::vector<PromptSegment<float>> segs;
  for (const auto& z : objects) segs.emplace_back(SoftSegment<float>{z});
  return prompts::vcr(segs, question, choices, vocab);
}

struct VCRAnswer {
  int choice = 1;  // 1..4
  std::vector<double> losses;
};

// Per-token mean loss of each choice under the prompt; argmin, lowest index on ties.
inline VCRAnswer vcr_answer(const RegionModel& m, const VCRInstance& inst, std::uint64_t seed) {
  if (inst.choices.size() != 4) throw DomainError("VCR needs exactly 4 choices");
  std::vector<nn::Mat<float>> zs;
  for (const auto& mask : inst.objects) {
    Rng rng(mask_seed(seed, mask));
    zs.push_back(region_soft_prompt(m, inst.image, sample_points_in_mask(mask, m.k, rng)));
  }
  const Prompt<float> prompt = vcr_prompt(zs, inst.question, inst.choices, m.vocab);
  VCRAnswer ans;
  for (const auto& c : inst.choices) ans.losses.push_back(m.lm.loss(prompt, with_eos(m.vocab.encode(c))).loss);
  ans.choice = static_cast<int>(argmin_index(ans.losses)) + 1;
  return ans;
}

// ---------------------------------------------------------------- question answering

struct VQAAnswer {
  std::string answer;
  std::string prompt_text;  // the filled question template
  std::size_t point_tokens = 0;
};

inline VQAAnswer vqa_answer(const RegionModel& m, const SyntheticImage& image, const std::string& question,
                            int max_tokens = kDefaultMaxCaptionTokens) {
  const std::vector<int> no_points;
  const auto out = m.encode_region(image, no_points);
  VQAAnswer a;
  a.point_tokens = no_points.size();
  a.prompt_text = prompts::vqa_text(question);
  a.answer = m.vocab.decode(m.lm.generate(prompts::vqa<float>(SoftSegment<float>{out.z_hat}, question, m.vocab), max_tokens));
  return a;
}

// ---------------------------------------------------------------- dialogue

struct DialogueTurn {
  std::string role;  // "user" or "model"
  std::string text;
  std::optional<std::vector<Point2D>> scribble;
};

struct DialogueState {
  std::vector<DialogueTurn> turns;

  void validate() const {
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const char* want = i % 2 == 0 ? "user" : "model";
      if (turns[i].role != want) throw DomainError("dialogue turns must alternate user/model starting with user");
    }
    if (turns.size() % 2 != 0) throw DomainError("dialogue history must end with a model turn");
  }
};

struct DialogueResult {
  std::string reply;
  DialogueState state;
  bool truncated = false;
};

namespace detail {

// Soft prompt for a user turn. A scribbled turn uses its region; the opening
// turn without a scribble uses the whole image; later unscribbled turns add
// nothing.
inline std::optional<nn::Mat<float>> turn_context(const RegionModel& m, const SyntheticImage& image, const DialogueTurn& t,
                                                  std::size_t user_index, std::uint64_t seed) {
  if (t.scribble && !t.scribble->empty()) {
    Rng rng(derive_seed(seed, user_index));
    return region_soft_prompt(m, image, sample_points(Scribble(*t.scribble), m.k, rng));
  }
  if (user_index == 0) return region_soft_prompt(m, image, {});
  return std::nullopt;
}

}  // namespace detail

// Prompt = for each earlier exchange: [region] cue reply <eos>, then the new
// turn's [region] cue. Oldest exchanges are dropped if the context overflows.
inline DialogueResult dialogue_step(const RegionModel& m, const SyntheticImage& image, const DialogueState& state,
                                    const std::string& user_text, const std::optional<std::vector<Point2D>>& scribble,
                                    std::uint64_t seed, int max_tokens = kDefaultMaxCaptionTokens) {
  state.validate();
  DialogueTurn user{"user", user_text, scribble};
  std::vector<DialogueTurn> all = state.turns;
  all.push_back(user);

  bool truncated = false;
  std::size_t first = 0;  // index of the oldest user turn kept
  const std::size_t context = static_cast<std::size_t>(m.lm.config().context);
  while (true) {
    Prompt<float> prompt;
    for (std::size_t i = first; i < all.size(); i += 2) {
      const std::size_t user_index = i / 2;
      if (auto z = detail::turn_context(m, image, all[i], user_index, seed)) prompt.soft(*z);
      prompt.text(prompts::reply_cue(m.vocab, all[i].text));
      if (i + 1 < all.size()) prompt.text(with_eos(m.vocab.encode(all[i + 1].text)));
    }
    if (prompt.length() + static_cast<std::size_t>(max_tokens) <= context || first + 1 >= all.size()) {
      if (prompt.length() >= context) throw ContextOverflow("dialogue query alone exceeds the context window");
      const int budget = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(max_tokens), context - prompt.length()));
      DialogueResult r;
      r.reply = m.vocab.decode(m.lm.generate(prompt, budget));
      r.truncated = truncated;
      r.state.turns = state.turns;
      r.state.turns.push_back(std::move(user));
      r.state.turns.push_back({"model", r.reply, std::nullopt});
      return r;
    }
    first += 2;
    truncated = true;
  }
}

}  // namespace regionvlm
