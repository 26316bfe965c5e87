#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "regionvlm/error.hpp"
#include "regionvlm/scribble_codec.hpp"

namespace regionvlm {

// Lowercased alphanumeric runs; every other non-space byte is its own token.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else {
      flush();
      out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

// Caption words layered on top of the point-token ids; the two id ranges never
// overlap. Frozen once built.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (PointTokenVocab::lookup(words_[i])) throw ConfigError("word collides with a point token: " + words_[i]);
      if (!index_.emplace(words_[i], PointTokenVocab::kSize + static_cast<int>(i)).second)
        throw ConfigError("duplicate vocabulary word: " + words_[i]);
    }
  }

  int size() const { return PointTokenVocab::kSize + static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  int id(std::string_view token) const {
    if (auto p = PointTokenVocab::lookup(token)) return *p;
    auto it = index_.find(std::string(token));
    return it == index_.end() ? PointTokenVocab::kUnk : it->second;
  }

  std::string token(int id) const {
    if (id < 0 || id >= size()) throw DomainError("token id out of range: " + std::to_string(id));
    if (id < PointTokenVocab::kSize) return PointTokenVocab::token_text(id);
    return words_[static_cast<std::size_t>(id - PointTokenVocab::kSize)];
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
  }

  // Space-joined tokens; stops at <eos> and skips <bos>/<pad>.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int t : ids) {
      if (t == PointTokenVocab::kEos) break;
      if (t == PointTokenVocab::kBos || t == PointTokenVocab::kPad) continue;
      if (!out.empty()) out += ' ';
      out += token(t);
    }
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

template <class Range>
Vocabulary build_vocab(const Range& corpus, int max_words) {
  if (max_words < 1) throw ConfigError("max_words must be at least 1");
  std::map<std::string, long> counts;
  bool any = false;
  for (const auto& text : corpus) {
    any = true;
    for (auto& w : split_words(text))
      if (!PointTokenVocab::lookup(w)) ++counts[w];
  }
  if (!any || counts.empty()) throw DomainError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(max_words); ++i)
    words.push_back(ranked[i].first);
  return Vocabulary(std::move(words));
}

}  // namespace regionvlm
