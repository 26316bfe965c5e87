#pragma once

// Mixed mini-batches: exactly half regional (scribble, caption) items and half
// global (whole-image, caption) items. Global items always carry an empty
// point-token sequence. K points are re-sampled from each scribble every time
// an item is drawn.

#include <cstdint>
#include <vector>

#include "regionvlm/error.hpp"
#include "regionvlm/rng.hpp"
#include "regionvlm/scribble_codec.hpp"

namespace regionvlm {

enum class Origin { kRegional, kGlobal };

struct TrainingExample {
  std::size_t image = 0;
  Scribble scribble;
  std::vector<int> target;  // caption ids, <eos>-terminated
};

struct TrainingItem {
  std::size_t image = 0;
  std::vector<int> point_tokens;
  std::vector<int> target;
  Origin origin = Origin::kRegional;
};

struct TrainingBatch {
  std::vector<TrainingItem> items;
};

inline std::vector<int> scribble_tokens(const Scribble& s, int k, Rng& rng) {
  if (s.empty()) return {};
  return tokenize_points(encode_points(sample_points(s, k, rng)));
}

// Single-consumer; use separate instances with distinct seeds for parallelism.
class MixedBatchSampler {
 public:
  MixedBatchSampler(std::vector<TrainingExample> regional, std::vector<TrainingExample> global, int batch_size, int k,
                    std::uint64_t seed, bool drop_points = false)
      : regional_(std::move(regional)), global_(std::move(global)), batch_size_(batch_size), k_(k),
        drop_points_(drop_points), rng_(seed) {
    if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch size must be a positive even number");
    if (regional_.empty() || global_.empty()) throw ConfigError("mixed batches need both regional and global data");
    if (k < 1) throw ConfigError("K must be at least 1");
    reg_order_ = identity(regional_.size());
    glob_order_ = identity(global_.size());
    shuffle(reg_order_, rng_);
    shuffle(glob_order_, rng_);
  }

  int batch_size() const { return batch_size_; }
  std::size_t regional_size() const { return regional_.size(); }
  // Steps needed to visit every regional example once.
  std::size_t steps_per_epoch() const {
    const auto half = static_cast<std::size_t>(batch_size_ / 2);
    return (regional_.size() + half - 1) / half;
  }

  TrainingBatch next() {
    TrainingBatch b;
    const int half = batch_size_ / 2;
    for (int i = 0; i < half; ++i) {
      const auto& ex = regional_[take(reg_order_, reg_pos_)];
      b.items.push_back({ex.image, drop_points_ ? std::vector<int>{} : scribble_tokens(ex.scribble, k_, rng_), ex.target,
                         Origin::kRegional});
    }
    for (int i = 0; i < half; ++i) {
      const auto& ex = global_[take(glob_order_, glob_pos_)];
      b.items.push_back({ex.image, {}, ex.target, Origin::kGlobal});
    }
    return b;
  }

 private:
  static std::vector<std::size_t> identity(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
  }
  std::size_t take(std::vector<std::size_t>& order, std::size_t& pos) {
    if (pos == order.size()) {
      shuffle(order, rng_);
      pos = 0;
    }
    return order[pos++];
  }

  std::vector<TrainingExample> regional_, global_;
  int batch_size_;
  int k_;
  bool drop_points_;
  Rng rng_;
  std::vector<std::size_t> reg_order_, glob_order_;
  std::size_t reg_pos_ = 0, glob_pos_ = 0;
};

}  // namespace regionvlm
