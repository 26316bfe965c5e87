#pragma once

// Line-delimited JSON formats for evaluation inputs, and generators that
// produce them from the synthetic grid world.

#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "regionvlm/downstream.hpp"
#include "regionvlm/lm_warmup.hpp"
#include "regionvlm/synthetic.hpp"

namespace regionvlm {

inline nlohmann::json mask_to_json(const GridMask& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"rle", rle_encode(m)}};
}

inline GridMask mask_from_json(const nlohmann::json& j) {
  return rle_decode(j.at("rle").get<std::vector<std::uint32_t>>(), j.at("rows").get<int>(), j.at("cols").get<int>());
}

template <class F>
void for_each_json_line(std::istream& in, const char* what, F&& f) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw ParseError(std::string(what) + " line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
}

// Synthetic world a model was trained on, recovered from its metadata.
inline SyntheticConfig model_data_config(const RegionModel& m) {
  if (m.metadata.contains("data")) return synthetic_config_from_manifest(m.metadata.at("data"));
  SyntheticConfig c;
  c.colors = m.encoder.config().colors;
  c.shapes = m.encoder.config().shapes;
  return c;
}

// ---------------------------------------------------------------- proposals

// {"image_id": str, "index": int, "rows": int, "cols": int, "rle": [int...]}
inline std::map<std::string, std::vector<MaskProposal>> load_proposals(std::istream& in) {
  std::map<std::string, std::vector<std::pair<int, MaskProposal>>> staged;
  for_each_json_line(in, "proposal", [&](const nlohmann::json& j) {
    MaskProposal p{j.at("image_id").get<std::string>(), mask_from_json(j), "file"};
    staged[p.image_id].emplace_back(j.at("index").get<int>(), std::move(p));
  });
  std::map<std::string, std::vector<MaskProposal>> out;
  for (auto& [id, list] : staged) {
    std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [idx, p] : list) out[id].push_back(std::move(p));
  }
  return out;
}

inline nlohmann::json proposal_to_json(const std::string& image_id, int index, const GridMask& m) {
  auto j = mask_to_json(m);
  j["image_id"] = image_id;
  j["index"] = index;
  return j;
}

// ---------------------------------------------------------------- RIS

inline nlohmann::json ris_to_json(const RISInstance& r, bool inline_proposals = true) {
  nlohmann::json j{{"id", r.id}, {"image", image_to_json(r.image)}, {"description", r.description}};
  if (r.ground_truth) j["gt"] = mask_to_json(*r.ground_truth);
  if (inline_proposals) {
    j["proposals"] = nlohmann::json::array();
    for (const auto& p : r.proposals) j["proposals"].push_back(mask_to_json(p));
  }
  return j;
}

// Proposals come inline or, when absent, from `proposals` keyed by image id.
inline std::vector<RISInstance> load_ris_instances(std::istream& in,
                                                   const std::map<std::string, std::vector<MaskProposal>>* proposals = nullptr) {
  std::vector<RISInstance> out;
  for_each_json_line(in, "RIS instance", [&](const nlohmann::json& j) {
    RISInstance r;
    r.id = j.at("id").get<std::string>();
    r.image = image_from_json(j.at("image"));
    r.description = j.at("description").get<std::string>();
    if (j.contains("gt")) r.ground_truth = mask_from_json(j.at("gt"));
    if (j.contains("proposals")) {
      for (const auto& p : j.at("proposals")) r.proposals.push_back(mask_from_json(p));
    } else if (proposals) {
      auto it = proposals->find(r.image.id);
      if (it == proposals->end()) throw DomainError("no proposals for image " + r.image.id);
      for (const auto& p : it->second) r.proposals.push_back(p.mask);
    }
    if (r.proposals.empty()) throw DomainError("RIS instance needs at least one proposal");
    out.push_back(std::move(r));
  });
  return out;
}

inline std::vector<RISInstance> make_ris_instances(const SyntheticConfig& cfg, int count) {
  Rng rng(cfg.seed);
  std::vector<RISInstance> out;
  for (int i = 0; i < count; ++i) {
    RISInstance r;
    r.id = "ris-" + std::to_string(i);
    r.image = random_image(cfg, "ris-img-" + std::to_string(cfg.seed) + "-" + std::to_string(i), rng);
    const std::size_t target = uniform_index(rng, r.image.objects.size());
    std::vector<std::size_t> order(r.image.objects.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    shuffle(order, rng);
    for (std::size_t k : order) r.proposals.push_back(r.image.object_mask(k));
    r.description = r.image.objects[target].caption();
    r.ground_truth = r.image.object_mask(target);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- VCR

inline nlohmann::json vcr_to_json(const VCRInstance& v) {
  nlohmann::json j{{"id", v.id}, {"image", image_to_json(v.image)}, {"question", v.question}, {"choices", v.choices}};
  j["objects"] = nlohmann::json::array();
  for (const auto& o : v.objects) j["objects"].push_back(mask_to_json(o));
  if (v.answer) j["answer"] = *v.answer;
  return j;
}

inline std::vector<VCRInstance> load_vcr_instances(std::istream& in) {
  std::vector<VCRInstance> out;
  for_each_json_line(in, "VCR instance", [&](const nlohmann::json& j) {
    VCRInstance v;
    v.id = j.at("id").get<std::string>();
    v.image = image_from_json(j.at("image"));
    for (const auto& o : j.at("objects")) v.objects.push_back(mask_from_json(o));
    v.question = j.at("question").get<std::string>();
    v.choices = j.at("choices").get<std::vector<std::string>>();
    if (v.choices.size() != 4) throw DomainError("VCR instance needs exactly 4 choices");
    if (j.contains("answer")) v.answer = j.at("answer").get<int>();
    check_placeholders(v.question, v.objects.size());
    out.push_back(std::move(v));
  });
  return out;
}

inline std::vector<VCRInstance> make_vcr_instances(const SyntheticConfig& cfg, int count) {
  Rng rng(cfg.seed);
  std::vector<VCRInstance> out;
  for (int i = 0; i < count; ++i) {
    VCRInstance v;
    v.id = "vcr-" + std::to_string(i);
    v.image = random_image(cfg, "vcr-img-" + std::to_string(cfg.seed) + "-" + std::to_string(i), rng);
    for (std::size_t k = 0; k < v.image.objects.size(); ++k) v.objects.push_back(v.image.object_mask(k));
    const std::size_t asked = uniform_index(rng, v.objects.size());
    v.question = vcr_question(asked);
    const std::string answer = v.image.objects[asked].caption();
    std::vector<std::string> choices{answer};
    while (choices.size() < 4) {
      const std::string c = cfg.colors[uniform_index(rng, cfg.colors.size())] + " " + cfg.shapes[uniform_index(rng, cfg.shapes.size())];
      if (std::find(choices.begin(), choices.end(), c) == choices.end()) choices.push_back(c);
    }
    shuffle(choices, rng);
    v.choices = choices;
    v.answer = static_cast<int>(std::find(choices.begin(), choices.end(), answer) - choices.begin()) + 1;
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------- VQA

struct VQAInstance {
  std::string id;
  SyntheticImage image;
  std::string question;
  std::optional<std::string> answer;
};

inline nlohmann::json vqa_to_json(const VQAInstance& v) {
  nlohmann::json j{{"id", v.id}, {"image", image_to_json(v.image)}, {"question", v.question}};
  if (v.answer) j["answer"] = *v.answer;
  return j;
}

inline std::vector<VQAInstance> load_vqa_instances(std::istream& in) {
  std::vector<VQAInstance> out;
  for_each_json_line(in, "VQA instance", [&](const nlohmann::json& j) {
    VQAInstance v{j.at("id").get<std::string>(), image_from_json(j.at("image")), j.at("question").get<std::string>(), std::nullopt};
    if (j.contains("answer")) v.answer = j.at("answer").get<std::string>();
    out.push_back(std::move(v));
  });
  return out;
}

inline std::vector<VQAInstance> make_vqa_instances(const SyntheticConfig& cfg, int count) {
  Rng rng(cfg.seed);
  std::vector<VQAInstance> out;
  for (int i = 0; i < count; ++i) {
    VQAInstance v;
    v.id = "vqa-" + std::to_string(i);
    v.image = random_image(cfg, "vqa-img-" + std::to_string(cfg.seed) + "-" + std::to_string(i), rng);
    const auto& o = v.image.objects[uniform_index(rng, v.image.objects.size())];
    v.question = color_question(o.shape);
    v.answer = o.color;
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------- captioning

struct CaptionInstance {
  std::string id;
  SyntheticImage image;
  Scribble scribble;  // empty for a whole-image caption
  std::optional<std::string> reference;
  std::optional<GridMask> region;  // cells of the indicated object, when known
};

inline nlohmann::json caption_to_json(const CaptionInstance& c) {
  nlohmann::json j{{"id", c.id}, {"image", image_to_json(c.image)}, {"points", nlohmann::json::array()}};
  for (const auto& p : c.scribble.points()) j["points"].push_back({p.x(), p.y()});
  if (c.reference) j["reference"] = *c.reference;
  if (c.region) j["region"] = mask_to_json(*c.region);
  return j;
}

inline std::vector<Point2D> points_from_json(const nlohmann::json& j) {
  std::vector<Point2D> pts;
  for (const auto& p : j) {
    if (p.is_array()) {
      if (p.size() != 2) throw DomainError("point must have two coordinates");
      pts.emplace_back(p[0].get<double>(), p[1].get<double>());
    } else {
      pts.emplace_back(p.at("x").get<double>(), p.at("y").get<double>());
    }
  }
  return pts;
}

inline std::vector<CaptionInstance> load_caption_instances(std::istream& in) {
  std::vector<CaptionInstance> out;
  for_each_json_line(in, "caption instance", [&](const nlohmann::json& j) {
    CaptionInstance c{j.at("id").get<std::string>(), image_from_json(j.at("image")),
                      Scribble(points_from_json(j.value("points", nlohmann::json::array()))), std::nullopt, std::nullopt};
    if (j.contains("reference")) c.reference = j.at("reference").get<std::string>();
    if (j.contains("region")) c.region = mask_from_json(j.at("region"));
    out.push_back(std::move(c));
  });
  return out;
}

inline std::vector<CaptionInstance> make_caption_instances(const SyntheticConfig& cfg, int count) {
  Rng rng(cfg.seed);
  std::vector<CaptionInstance> out;
  for (int i = 0; i < count; ++i) {
    CaptionInstance c;
    c.id = "cap-" + std::to_string(i);
    c.image = random_image(cfg, "cap-img-" + std::to_string(cfg.seed) + "-" + std::to_string(i), rng);
    const std::size_t k = uniform_index(rng, c.image.objects.size());
    c.scribble = scribble_in_object(c.image.objects[k], c.image.grid, 16, rng);
    c.reference = c.image.objects[k].caption();
    c.region = c.image.object_mask(k);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace regionvlm
