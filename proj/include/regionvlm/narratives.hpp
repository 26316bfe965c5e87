#pragma once

// Localized-narrative style records: a caption, per-utterance timing, and a
// timed mouse trace. Captions are split into segments at '.' and ',' and each
// segment is paired with the trace points recorded while it was spoken.

#include <istream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "regionvlm/error.hpp"
#include "regionvlm/rng.hpp"
#include "regionvlm/scribble_codec.hpp"

namespace regionvlm {

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  bool operator==(const CharSpan&) const = default;
};

struct TimeInterval {
  double t0 = 0;
  double t1 = 0;  // exclusive
  bool contains(double t) const { return t >= t0 && t < t1; }
};

struct Utterance {
  CharSpan span;
  TimeInterval time;
};

struct TracePoint {
  Point2D point;
  double t;
};

struct NarrativeRecord {
  std::string image_id;
  std::string caption;
  std::vector<Utterance> utterances;
  std::vector<TracePoint> trace;
};

// One (scribble, caption segment) training example. Global pairs carry an
// empty scribble.
struct RegionCaptionPair {
  std::string image_id;
  Scribble scribble;
  std::string text;
};

struct LineIssue {
  std::size_t line = 0;
  std::string message;
};

struct NarrativeParseResult {
  std::vector<NarrativeRecord> records;
  std::vector<LineIssue> warnings;
};

inline void validate_record(const NarrativeRecord& r) {
  const CharSpan* prev = nullptr;
  for (const auto& u : r.utterances) {
    if (u.span.begin > u.span.end) throw DomainError("utterance span is reversed");
    if (u.span.end > r.caption.size()) throw DomainError("utterance span exceeds caption");
    if (u.time.t0 > u.time.t1) throw DomainError("utterance time interval is reversed");
    if (prev && u.span.begin < prev->end) throw DomainError("utterance spans overlap or are out of order");
    prev = &u.span;
  }
  for (std::size_t i = 1; i < r.trace.size(); ++i)
    if (r.trace[i].t < r.trace[i - 1].t) throw DomainError("trace timestamps decrease");
}

inline NarrativeRecord narrative_from_json(const nlohmann::json& j) {
  NarrativeRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.caption = j.at("caption").get<std::string>();
  for (const auto& u : j.at("utterances")) {
    const auto& span = u.at("span");
    const auto& time = u.at("time");
    if (span.size() != 2 || time.size() != 2) throw DomainError("span and time must have two entries");
    r.utterances.push_back({{span[0].get<std::size_t>(), span[1].get<std::size_t>()},
                            {time[0].get<double>(), time[1].get<double>()}});
  }
  for (const auto& p : j.at("trace"))
    r.trace.push_back({Point2D(p.at("x").get<double>(), p.at("y").get<double>()), p.at("t").get<double>()});
  validate_record(r);
  return r;
}

inline nlohmann::json narrative_to_json(const NarrativeRecord& r) {
  nlohmann::json j;
  j["image_id"] = r.image_id;
  j["caption"] = r.caption;
  j["utterances"] = nlohmann::json::array();
  for (const auto& u : r.utterances)
    j["utterances"].push_back({{"span", {u.span.begin, u.span.end}}, {"time", {u.time.t0, u.time.t1}}});
  j["trace"] = nlohmann::json::array();
  for (const auto& p : r.trace) j["trace"].push_back({{"x", p.point.x()}, {"y", p.point.y()}, {"t", p.t}});
  return j;
}

// Strict mode throws on the first bad line (ParseError::position() is the
// 1-based line number); lenient mode skips it and records a warning.
inline NarrativeParseResult parse_narratives(std::istream& in, bool strict = true) {
  NarrativeParseResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      result.records.push_back(narrative_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      if (strict) throw ParseError("narrative record line " + std::to_string(lineno) + ": " + e.what(), lineno);
      result.warnings.push_back({lineno, e.what()});
    }
  }
  return result;
}

struct CaptionSegment {
  std::string text;
  CharSpan span;
  bool operator==(const CaptionSegment&) const = default;
};

inline std::vector<CaptionSegment> split_caption(std::string_view caption) {
  std::vector<CaptionSegment> out;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  std::size_t start = 0;
  for (std::size_t i = 0; i <= caption.size(); ++i) {
    if (i < caption.size() && caption[i] != '.' && caption[i] != ',') continue;
    std::size_t b = start, e = i;
    while (b < e && is_space(caption[b])) ++b;
    while (e > b && is_space(caption[e - 1])) --e;
    if (e > b) out.push_back({std::string(caption.substr(b, e - b)), {b, e}});
    start = i + 1;
  }
  return out;
}

struct AlignmentResult {
  std::vector<RegionCaptionPair> pairs;
  std::size_t dropped = 0;
};

// Each utterance goes to the segment it overlaps most (earliest on ties), so a
// trace point can land in at most one pair.
inline AlignmentResult align_segments_to_trace(const NarrativeRecord& record) {
  const auto segments = split_caption(record.caption);
  std::vector<std::vector<TimeInterval>> intervals(segments.size());
  for (const auto& u : record.utterances) {
    std::size_t best = segments.size();
    std::size_t best_overlap = 0;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const std::size_t lo = std::max(u.span.begin, segments[s].span.begin);
      const std::size_t hi = std::min(u.span.end, segments[s].span.end);
      if (hi > lo && hi - lo > best_overlap) {
        best_overlap = hi - lo;
        best = s;
      }
    }
    if (best < segments.size()) intervals[best].push_back(u.time);
  }

  AlignmentResult result;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    std::vector<Point2D> pts;
    std::vector<double> ts;
    for (const auto& tp : record.trace) {
      for (const auto& iv : intervals[s]) {
        if (iv.contains(tp.t)) {
          pts.push_back(tp.point);
          ts.push_back(tp.t);
          break;
        }
      }
    }
    if (pts.empty()) {
      ++result.dropped;
      continue;
    }
    result.pairs.push_back({record.image_id, Scribble(std::move(pts), std::move(ts)), segments[s].text});
  }
  return result;
}

struct BoxCaption {
  std::string image_id;
  Box box;
  std::string text;
};

inline std::vector<BoxCaption> parse_box_captions(std::istream& in) {
  std::vector<BoxCaption> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto& b = j.at("box");
      if (b.size() != 4) throw DomainError("box must have 4 entries");
      out.push_back({j.at("image_id").get<std::string>(),
                     {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()},
                     j.at("text").get<std::string>()});
    } catch (const std::exception& e) {
      throw ParseError(std::string("box caption line ") + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  return out;
}

struct BoxPairsResult {
  std::vector<RegionCaptionPair> pairs;
  std::vector<std::string> warnings;
};

inline BoxPairsResult pairs_from_bboxes(const std::string& image_id, const std::vector<std::pair<Box, std::string>>& boxed,
                                        int k, Rng& rng) {
  BoxPairsResult result;
  for (const auto& [box, text] : boxed) {
    try {
      result.pairs.push_back({image_id, Scribble(sample_points_in_bbox(box, k, rng)), text});
    } catch (const DomainError& e) {
      result.warnings.push_back(image_id + ": skipped box (" + e.what() + ")");
    }
  }
  return result;
}

}  // namespace regionvlm
