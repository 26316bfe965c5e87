#pragma once

// Prompt layouts shared by training, the language-model warm-up and the
// downstream tasks. A "context" is whatever stands for an image region: the
// soft rows from the query transformer, or (during warm-up) the caption text.

#include <string>
#include <vector>

#include "regionvlm/error.hpp"
#include "regionvlm/frozen_lm.hpp"
#include "regionvlm/vocabulary.hpp"

namespace regionvlm::prompts {

inline constexpr const char* kQuestionPrefix = "Question: ";
inline constexpr const char* kAnswerSuffix = " Answer:";

inline std::string vqa_text(const std::string& question) { return kQuestionPrefix + question + kAnswerSuffix; }

template <class S>
void append(Prompt<S>& p, const PromptSegment<S>& seg) {
  if (const auto* t = std::get_if<TextSegment>(&seg)) {
    p.text(t->ids);
  } else {
    p.segments.push_back(seg);
  }
}

// Captioning: context, then <bos>.
template <class S>
Prompt<S> caption(const PromptSegment<S>& context) {
  Prompt<S> p;
  append(p, context);
  p.text({PointTokenVocab::kBos});
  return p;
}

// The cue that asks for a reply: <bos> for a bare region, otherwise the
// question template.
inline std::vector<int> reply_cue(const Vocabulary& vocab, const std::string& query) {
  if (query.empty()) return {PointTokenVocab::kBos};
  return vocab.encode(vqa_text(query));
}

template <class S>
Prompt<S> vqa(const PromptSegment<S>& context, const std::string& question, const Vocabulary& vocab) {
  Prompt<S> p;
  append(p, context);
  p.text(vocab.encode(vqa_text(question)));
  return p;
}

inline std::string vcr_object_label(std::size_t k) { return "[" + std::to_string(k) + "]:"; }

inline std::string vcr_tail(const std::string& question, const std::vector<std::string>& choices) {
  std::string s = ", " + question;
  for (std::size_t i = 0; i < choices.size(); ++i) s += " " + std::to_string(i + 1) + ". " + choices[i];
  return s + kAnswerSuffix;
}

// "[0]: <ctx0> [1]: <ctx1> , <question> 1. a 2. b 3. c 4. d Answer:"
template <class S>
Prompt<S> vcr(const std::vector<PromptSegment<S>>& objects, const std::string& question,
              const std::vector<std::string>& choices, const Vocabulary& vocab) {
  Prompt<S> p;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    p.text(vocab.encode(vcr_object_label(k)));
    append(p, objects[k]);
  }
  p.text(vocab.encode(objects.empty() ? vcr_tail(question, choices).substr(2) : vcr_tail(question, choices)));
  return p;
}

// Human-readable rendering; soft segments show as <soft:rows>.
template <class S>
std::string serialize(const Prompt<S>& p, const Vocabulary& vocab) {
  std::string out;
  for (const auto& seg : p.segments) {
    if (!out.empty()) out += ' ';
    if (const auto* t = std::get_if<TextSegment>(&seg)) {
      for (std::size_t i = 0; i < t->ids.size(); ++i) out += (i ? " " : "") + vocab.token(t->ids[i]);
    } else {
      out += "<soft:" + std::to_string(std::get<SoftSegment<S>>(seg).rows.rows()) + ">";
    }
  }
  return out;
}

}  // namespace regionvlm::prompts
