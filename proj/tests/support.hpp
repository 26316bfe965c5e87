#pragma once

// Shared fixtures: tiny configurations and a briefly trained model.

#include <cmath>
#include <filesystem>
#include <string>

#include "regionvlm/model.hpp"
#include "regionvlm/trainer.hpp"

namespace regionvlm::testing {

inline QFormerConfig tiny_qformer(int n = 2, int layers = 1, int d = 6, int d_visual = 5, int d_out = 4) {
  QFormerConfig c;
  c.num_queries = n;
  c.d_model = d;
  c.d_visual = d_visual;
  c.d_out = d_out;
  c.layers = layers;
  c.heads = 2;
  c.ffn_hidden = 7;
  c.max_point_tokens = 8;
  return c;
}

inline LMConfig tiny_lm(int d = 6, int layers = 1) {
  LMConfig c;
  c.vocab = PointTokenVocab::kSize + 5;
  c.d_model = d;
  c.layers = layers;
  c.heads = 2;
  c.ffn_hidden = 8;
  c.context = 24;
  return c;
}

template <class S>
ImageFeatures<S> random_features(int rows, int cols, int d, Rng& rng) {
  ImageFeatures<S> f;
  f.rows = rows;
  f.cols = cols;
  f.grid = nn::randn<S>(rows * cols, d, 1.0, rng);
  return f;
}

// Small enough to train in a few seconds; big enough to learn something.
inline TrainConfig quick_config() {
  TrainConfig c;
  c.num_images = 200;
  c.eval_images = 12;
  c.max_steps = 600;
  c.batch_size = 16;
  c.warmup.steps = 300;
  return c;
}

struct TrainedFixture {
  TrainConfig cfg;
  FrozenLM<float> sealed_lm;  // untouched copy, for re-running training
  TrainingSetup setup;
  TrainReport report;
};

// Built once per test binary.
inline const TrainedFixture& trained() {
  static const TrainedFixture f = [] {
    TrainedFixture t;
    t.cfg = quick_config();
    t.sealed_lm = build_frozen_lm(t.cfg, vocabulary_for(t.cfg));
    t.setup = prepare_training(t.cfg, t.sealed_lm);
    t.report = train(t.setup, t.cfg);
    return t;
  }();
  return f;
}

inline const RegionModel& trained_model() { return trained().setup.model; }

inline std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "regionvlm_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace regionvlm::testing
