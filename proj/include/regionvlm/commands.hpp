#pragma once

// Command implementations behind tools/regionvlm. Each one writes only to the
// streams and paths it is given, so tests can run them in-process and compare
// bytes. Timing goes to the log stream, never into an output file.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "regionvlm/downstream.hpp"
#include "regionvlm/instances.hpp"
#include "regionvlm/trainer.hpp"

namespace regionvlm::commands {

inline const std::vector<std::string> kEvalTasks = {"ris", "vcr", "vqa", "caption", "robustness"};
inline const std::vector<int> kDefaultRadii = {0, 3, 7, 15};

// "x,y" with both in [0,1].
inline Point2D parse_point_arg(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw DomainError("point '" + s + "' is not of the form x,y");
  std::size_t used_x = 0, used_y = 0;
  double x = 0, y = 0;
  try {
    x = std::stod(s.substr(0, comma), &used_x);
    y = std::stod(s.substr(comma + 1), &used_y);
  } catch (const std::logic_error&) {
    throw DomainError("point '" + s + "' has a non-numeric coordinate");
  }
  if (used_x != comma || used_y != s.size() - comma - 1) throw DomainError("point '" + s + "' has trailing characters");
  return Point2D(x, y);
}

inline std::string encode_args(const std::vector<std::string>& args) {
  std::vector<Point2D> pts;
  for (const auto& a : args) pts.push_back(parse_point_arg(a));
  return encode_points(pts);
}

inline std::vector<int> parse_radii(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    int r = 0;
    try {
      r = std::stoi(item, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != item.size() || r < 0) throw DomainError("radius '" + item + "' is not a non-negative integer");
    out.push_back(r);
  }
  if (out.empty()) throw DomainError("no radii given");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

inline TrainConfig load_train_config(const std::string& path, std::optional<std::uint64_t> seed) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("config file not found: " + path);
  auto in = open_in(path);
  TrainConfig cfg = parse_train_config(in);
  if (seed) cfg.seed = *seed;
  return cfg;
}

// ---------------------------------------------------------------- make-data

inline nlohmann::json pair_json(const SyntheticPair& p, const char* kind) {
  nlohmann::json j{{"image_id", p.pair.image_id}, {"kind", kind}, {"object", p.object}, {"text", p.pair.text}};
  auto pts = nlohmann::json::array();
  for (const auto& q : p.pair.scribble.points()) pts.push_back({q.x(), q.y()});
  j["points"] = pts;
  if (p.pair.scribble.timestamps()) j["t"] = *p.pair.scribble.timestamps();
  return j;
}

// Writes manifest.json, images.jsonl and pairs.jsonl (regional, then global).
inline void make_data(const TrainConfig& cfg, const std::string& dir, bool held_out) {
  const SyntheticConfig dc = cfg.data_config(held_out);
  const SyntheticDataset ds = make_synthetic_dataset(dc);
  std::filesystem::create_directories(dir);
  auto manifest = synthetic_manifest(dc);
  manifest["regional_pairs"] = ds.regional.size();
  manifest["global_pairs"] = ds.global.size();
  open_out(dir + "/manifest.json") << manifest.dump(2) << "\n";
  auto images = open_out(dir + "/images.jsonl");
  for (const auto& img : ds.images) images << image_to_json(img).dump() << "\n";
  auto pairs = open_out(dir + "/pairs.jsonl");
  for (const auto& p : ds.regional) pairs << pair_json(p, "regional").dump() << "\n";
  for (const auto& p : ds.global) pairs << pair_json(p, "global").dump() << "\n";
}

// ---------------------------------------------------------------- warm-lm / train

inline void warm_lm(const TrainConfig& cfg, const std::string& out_path, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const Vocabulary vocab = vocabulary_for(cfg);
  WarmupReport wr;
  const auto lm = build_frozen_lm(cfg, vocab, &wr);
  write_file(out_path, serialize_frozen_lm(lm, vocab));
  log << "lm warm-up loss " << wr.first_loss << " -> " << wr.last_loss << " in "
      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
}

struct TrainPaths {
  std::string checkpoint;
  std::string report;          // one JSON line per optimizer step
  std::string lm;              // optional pre-sealed language model
  bool epoch_checkpoints = true;
};

inline nlohmann::json train_summary(const TrainReport& r) {
  return {{"steps", r.steps.size()},
          {"final_loss", r.steps.empty() ? 0.0 : r.steps.back().loss},
          {"epoch_eval_loss", r.epoch_eval_loss},
          {"lm_checksum_before", hex64(r.lm_checksum_before)},
          {"lm_checksum_after", hex64(r.lm_checksum_after)},
          {"encoder_checksum_before", hex64(r.encoder_checksum_before)},
          {"encoder_checksum_after", hex64(r.encoder_checksum_after)}};
}

// Final checkpoint at paths.checkpoint, per-epoch ones at "<path>.epoch-<n>",
// and the lowest held-out loss at "<path>.best".
inline TrainReport train_command(const TrainConfig& cfg, const TrainPaths& paths, std::ostream& out, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<FrozenLM<float>> lm;
  if (!paths.lm.empty()) {
    SealedLM sealed = deserialize_frozen_lm(read_file(paths.lm));
    if (sealed.vocab.words() != vocabulary_for(cfg).words())
      throw ConfigError("sealed language model was built for a different vocabulary");
    lm = std::move(sealed.lm);
  }
  TrainingSetup setup = prepare_training(cfg, std::move(lm));
  log << "setup " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";

  double best = std::numeric_limits<double>::infinity();
  const TrainReport report = train(setup, cfg, [&](int epoch, double eval, const RegionModel& m) {
    log << "epoch " << epoch << " held-out loss " << eval << "\n";
    if (!paths.epoch_checkpoints) return;
    const std::string bytes = serialize_model(m);
    write_file(paths.checkpoint + ".epoch-" + std::to_string(epoch), bytes);
    if (eval < best) {
      best = eval;
      write_file(paths.checkpoint + ".best", bytes);
    }
  });
  save_model(paths.checkpoint, setup.model);
  if (!paths.report.empty()) {
    auto rep = open_out(paths.report);
    for (const auto& s : report.steps) rep << format_step(s) << "\n";
  }
  out << train_summary(report).dump() << "\n";
  log << "trained " << report.steps.size() << " steps in " << report.wall_seconds << " s\n";
  return report;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string task;
  std::string data;
  std::string proposals;  // RIS/robustness only, when instances carry none inline
  std::vector<int> radii = kDefaultRadii;
  std::uint64_t seed = kDefaultSeed;
  int max_tokens = kDefaultMaxCaptionTokens;
  bool table = false;  // robustness: plain-text table instead of JSON lines
};

inline std::vector<RISInstance> read_ris(const EvalOptions& o) {
  auto in = open_in(o.data);
  if (o.proposals.empty()) return load_ris_instances(in);
  auto pin = open_in(o.proposals);
  const auto props = load_proposals(pin);
  return load_ris_instances(in, &props);
}

inline std::string robustness_table(const std::vector<RobustnessRow>& rows) {
  std::ostringstream s;
  s << "radius  mIoU\n";
  for (const auto& r : rows) s << std::setw(6) << r.radius << "  " << std::fixed << std::setprecision(4) << r.miou << "\n";
  return s.str();
}

// One JSON line per instance, then one summary line (one line per radius for
// robustness).
inline void eval_command(const RegionModel& m, const EvalOptions& o, std::ostream& out) {
  auto rate = [](int hits, std::size_t n) { return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n); };
  if (o.task == "ris") {
    const auto instances = read_ris(o);
    std::vector<GridMask> pred, truth;
    int correct = 0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto& inst = instances[i];
      const auto sel = ris_select(m, inst, instance_seed(o.seed, inst.id));
      nlohmann::json j{{"id", inst.id}, {"selected", sel.index}, {"scores", sel.scores}};
      if (inst.ground_truth) {
        const auto& chosen = inst.proposals[sel.index];
        j["iou"] = mask_iou(chosen, *inst.ground_truth);
        j["correct"] = chosen == *inst.ground_truth;
        correct += chosen == *inst.ground_truth;
        pred.push_back(chosen);
        truth.push_back(*inst.ground_truth);
      }
      out << j.dump() << "\n";
    }
    nlohmann::json summary{{"instances", instances.size()}};
    if (!truth.empty() && truth.size() == instances.size()) {
      summary["miou"] = compute_miou(pred, truth);
      summary["correct_rate"] = rate(correct, instances.size());
    }
    out << summary.dump() << "\n";
  } else if (o.task == "robustness") {
    const auto rows = robustness_report(m, read_ris(o), o.radii, o.seed);
    if (o.table) {
      out << robustness_table(rows);
    } else {
      for (const auto& row : rows) out << nlohmann::json{{"radius", row.radius}, {"miou", row.miou}}.dump() << "\n";
    }
  } else if (o.task == "vcr") {
    auto in = open_in(o.data);
    const auto instances = load_vcr_instances(in);
    int correct = 0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto a = vcr_answer(m, instances[i], instance_seed(o.seed, instances[i].id));
      nlohmann::json j{{"id", instances[i].id}, {"choice", a.choice}, {"losses", a.losses}};
      if (instances[i].answer) {
        j["correct"] = a.choice == *instances[i].answer;
        correct += a.choice == *instances[i].answer;
      }
      out << j.dump() << "\n";
    }
    out << nlohmann::json{{"instances", instances.size()}, {"accuracy", rate(correct, instances.size())}}.dump() << "\n";
  } else if (o.task == "vqa") {
    auto in = open_in(o.data);
    const auto instances = load_vqa_instances(in);
    int correct = 0;
    for (const auto& v : instances) {
      const auto a = vqa_answer(m, v.image, v.question, o.max_tokens);
      nlohmann::json j{{"id", v.id}, {"answer", a.answer}, {"prompt", a.prompt_text}, {"point_tokens", a.point_tokens}};
      if (v.answer) {
        j["correct"] = a.answer == *v.answer;
        correct += a.answer == *v.answer;
      }
      out << j.dump() << "\n";
    }
    out << nlohmann::json{{"instances", instances.size()}, {"accuracy", rate(correct, instances.size())}}.dump() << "\n";
  } else if (o.task == "caption") {
    auto in = open_in(o.data);
    const auto instances = load_caption_instances(in);
    int correct = 0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto& c = instances[i];
      Rng rng(instance_seed(o.seed, c.id));
      const auto pts = scribble_points(m, c.scribble, rng);
      const auto text = caption_points(m, c.image, pts, o.max_tokens);
      nlohmann::json j{{"id", c.id}, {"caption", text}, {"tokens", encode_points(pts)}};
      if (c.reference) {
        j["correct"] = text == *c.reference;
        correct += text == *c.reference;
      }
      out << j.dump() << "\n";
    }
    out << nlohmann::json{{"instances", instances.size()}, {"exact_match", rate(correct, instances.size())}}.dump() << "\n";
  } else {
    throw DomainError("unknown eval task '" + o.task + "'");
  }
}

// ---------------------------------------------------------------- make-eval

// Synthetic evaluation instances for `task` (robustness uses the RIS format).
// With a non-empty `proposals_out`, RIS proposals go to that file instead of
// inline.
inline void make_eval(const std::string& task, SyntheticConfig dc, int count, std::uint64_t seed, std::ostream& out,
                      std::ostream* proposals_out = nullptr) {
  dc.seed = derive_seed(seed, 0xe7a1);
  if (task == "ris" || task == "robustness") {
    for (const auto& r : make_ris_instances(dc, count)) {
      out << ris_to_json(r, proposals_out == nullptr).dump() << "\n";
      if (proposals_out)
        for (std::size_t k = 0; k < r.proposals.size(); ++k)
          *proposals_out << proposal_to_json(r.image.id, static_cast<int>(k), r.proposals[k]).dump() << "\n";
    }
  } else if (task == "vcr") {
    for (const auto& v : make_vcr_instances(dc, count)) out << vcr_to_json(v).dump() << "\n";
  } else if (task == "vqa") {
    for (const auto& v : make_vqa_instances(dc, count)) out << vqa_to_json(v).dump() << "\n";
  } else if (task == "caption") {
    for (const auto& c : make_caption_instances(dc, count)) out << caption_to_json(c).dump() << "\n";
  } else {
    throw DomainError("unknown eval task '" + task + "'");
  }
}

// ---------------------------------------------------------------- stats

template <class Params>
std::size_t parameter_count(Params p) {
  std::size_t n = 0;
  for (auto* t : nn::tensor_list<float>(p)) n += static_cast<std::size_t>(t->size());
  return n;
}

inline nlohmann::json model_stats(const RegionModel& m) {
  return {{"k", m.k},
          {"vocab_size", m.vocab.size()},
          {"qformer", qformer_config_json(m.qformer.config)},
          {"lm", lm_config_json(m.lm.config())},
          {"qformer_parameters", parameter_count(m.qformer)},
          {"lm_parameters", parameter_count(m.lm.params())},
          {"lm_seal_checksum", hex64(m.lm.seal_checksum())},
          {"lm_verified", m.lm.verify()},
          {"encoder_checksum", hex64(m.encoder.checksum())},
          {"metadata", m.metadata}};
}

// Loss summary of a training report file.
inline nlohmann::json report_stats(std::istream& in) {
  std::vector<double> loss, reg, glob;
  for_each_json_line(in, "report", [&](const nlohmann::json& j) {
    loss.push_back(j.at("loss").get<double>());
    reg.push_back(j.at("loss_regional").get<double>());
    glob.push_back(j.at("loss_global").get<double>());
  });
  if (loss.empty()) throw DomainError("empty training report");
  auto window_mean = [](const std::vector<double>& v, bool head) {
    const std::size_t w = std::min<std::size_t>(20, v.size());
    double s = 0;
    for (std::size_t i = 0; i < w; ++i) s += head ? v[i] : v[v.size() - 1 - i];
    return s / static_cast<double>(w);
  };
  return {{"steps", loss.size()},
          {"initial_loss", window_mean(loss, true)},
          {"final_loss", window_mean(loss, false)},
          {"final_loss_regional", window_mean(reg, false)},
          {"final_loss_global", window_mean(glob, false)}};
}

// Dataset statistics for a narrative record file (lenient parse).
inline nlohmann::json narrative_stats(std::istream& in) {
  const auto parsed = parse_narratives(in, false);
  std::size_t segments = 0, pairs = 0, dropped = 0, points = 0, words = 0;
  for (const auto& r : parsed.records) {
    segments += split_caption(r.caption).size();
    const auto a = align_segments_to_trace(r);
    pairs += a.pairs.size();
    dropped += a.dropped;
    for (const auto& p : a.pairs) {
      points += p.scribble.size();
      words += split_words(p.text).size();
    }
  }
  auto per_pair = [&](std::size_t n) { return pairs == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(pairs); };
  return {{"records", parsed.records.size()}, {"skipped_lines", parsed.warnings.size()}, {"segments", segments},
          {"pairs", pairs}, {"dropped_segments", dropped}, {"mean_points_per_pair", per_pair(points)},
          {"mean_words_per_pair", per_pair(words)}};
}

}  // namespace regionvlm::commands
