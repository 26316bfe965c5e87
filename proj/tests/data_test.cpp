#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "regionvlm/batching.hpp"
#include "regionvlm/lm_warmup.hpp"
#include "regionvlm/narratives.hpp"
#include "regionvlm/synthetic.hpp"
#include "regionvlm/visual_encoder.hpp"
#include "regionvlm/vocabulary.hpp"

using namespace regionvlm;

namespace {

const char* kGoodRecord =
    R"({"image_id":"img1","caption":"A dog. Grass here","utterances":[{"span":[0,6],"time":[1.0,3.0]},)"
    R"({"span":[7,17],"time":[3.0,5.0]}],"trace":[{"x":0.1,"y":0.2,"t":1.5},{"x":0.3,"y":0.4,"t":2.5},)"
    R"({"x":0.5,"y":0.6,"t":4.0}]})";

NarrativeRecord record(std::string caption, std::vector<Utterance> u, std::vector<TracePoint> trace) {
  return {"img", std::move(caption), std::move(u), std::move(trace)};
}

}  // namespace

// ---------------------------------------------------------------- narratives

TEST(ParseNarratives, TwoLines) {
  std::istringstream in(std::string(kGoodRecord) + "\n" + kGoodRecord + "\n");
  const auto r = parse_narratives(in);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].image_id, "img1");
  EXPECT_EQ(r.records[0].trace.size(), 3u);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(ParseNarratives, EmptyInput) {
  std::istringstream in("");
  EXPECT_TRUE(parse_narratives(in).records.empty());
}

TEST(ParseNarratives, OverlappingSpansNameTheLine) {
  const std::string bad =
      R"({"image_id":"x","caption":"abcdef","utterances":[{"span":[0,4],"time":[0,1]},{"span":[2,6],"time":[1,2]}],"trace":[]})";
  std::istringstream strict_in(std::string(kGoodRecord) + "\n" + bad + "\n");
  try {
    parse_narratives(strict_in, true);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream lenient_in(std::string(kGoodRecord) + "\n" + bad + "\nnot json\n");
  const auto r = parse_narratives(lenient_in, false);
  EXPECT_EQ(r.records.size(), 1u);
  ASSERT_EQ(r.warnings.size(), 2u);
  EXPECT_EQ(r.warnings[0].line, 2u);
  EXPECT_EQ(r.warnings[1].line, 3u);
}

TEST(ParseNarratives, RecordRoundTrip) {
  std::istringstream in(kGoodRecord);
  const auto rec = parse_narratives(in).records.at(0);
  const auto again = narrative_from_json(narrative_to_json(rec));
  EXPECT_EQ(narrative_to_json(again), narrative_to_json(rec));
}

TEST(ParseNarratives, RejectsBadTrace) {
  const std::string out_of_range =
      R"({"image_id":"x","caption":"a","utterances":[],"trace":[{"x":1.2,"y":0.1,"t":0}]})";
  const std::string decreasing =
      R"({"image_id":"x","caption":"a","utterances":[],"trace":[{"x":0.2,"y":0.1,"t":2},{"x":0.2,"y":0.1,"t":1}]})";
  for (const auto& line : {out_of_range, decreasing}) {
    std::istringstream in(line);
    EXPECT_THROW(parse_narratives(in), ParseError) << line;
  }
}

TEST(SplitCaption, Examples) {
  auto texts = [](std::string_view c) {
    std::vector<std::string> out;
    for (const auto& s : split_caption(c)) out.push_back(s.text);
    return out;
  };
  EXPECT_EQ(texts("In this image we can see a dog. There is grass."),
            (std::vector<std::string>{"In this image we can see a dog", "There is grass"}));
  EXPECT_EQ(texts("a, b."), (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(texts("").empty());
  EXPECT_EQ(texts(" ,, x ,"), (std::vector<std::string>{"x"}));
}

TEST(SplitCaption, SpansIndexTheOriginal) {
  const std::string c = "  Mr. Smith,walks  . home ";
  for (const auto& s : split_caption(c)) EXPECT_EQ(c.substr(s.span.begin, s.span.end - s.span.begin), s.text);
  const auto segs = split_caption(c);
  ASSERT_EQ(segs.size(), 4u);
  EXPECT_EQ(segs[0].text, "Mr");  // abbreviations are not special-cased
}

TEST(AlignSegments, IntervalMembership) {
  std::istringstream in(kGoodRecord);
  const auto rec = parse_narratives(in).records.at(0);
  const auto a = align_segments_to_trace(rec);
  ASSERT_EQ(a.pairs.size(), 2u);
  EXPECT_EQ(a.pairs[0].text, "A dog");
  ASSERT_EQ(a.pairs[0].scribble.size(), 2u);
  EXPECT_EQ(*a.pairs[0].scribble.timestamps(), (std::vector<double>{1.5, 2.5}));
  EXPECT_EQ(a.pairs[1].text, "Grass here");
  EXPECT_EQ(*a.pairs[1].scribble.timestamps(), (std::vector<double>{4.0}));
  EXPECT_EQ(a.dropped, 0u);
}

TEST(AlignSegments, DropsSegmentsWithoutPoints) {
  const auto rec = record("one. two", {{{0, 3}, {0.0, 1.0}}, {{5, 8}, {5.0, 6.0}}},
                          {{Point2D(0.1, 0.1), 0.5}, {Point2D(0.2, 0.2), 2.0}});
  const auto a = align_segments_to_trace(rec);
  ASSERT_EQ(a.pairs.size(), 1u);
  EXPECT_EQ(a.pairs[0].text, "one");
  EXPECT_EQ(a.dropped, 1u);
}

TEST(AlignSegments, SingleSegmentTakesWholeTrace) {
  const auto rec = record("a cat on a mat", {{{0, 14}, {0.0, 10.0}}},
                          {{Point2D(0.1, 0.1), 0.0}, {Point2D(0.2, 0.2), 4.0}, {Point2D(0.3, 0.3), 9.9}});
  const auto a = align_segments_to_trace(rec);
  ASSERT_EQ(a.pairs.size(), 1u);
  EXPECT_EQ(a.pairs[0].scribble.size(), 3u);
}

TEST(AlignSegments, EveryTracePointUsedAtMostOnce) {
  // One utterance straddles both segments; it belongs to the one it overlaps most.
  const auto rec = record("left side, right", {{{0, 12}, {0.0, 2.0}}, {{12, 17}, {2.0, 3.0}}},
                          {{Point2D(0.1, 0.1), 0.5}, {Point2D(0.2, 0.2), 1.5}, {Point2D(0.3, 0.3), 2.5}});
  const auto a = align_segments_to_trace(rec);
  std::size_t total = 0;
  for (const auto& p : a.pairs) total += p.scribble.size();
  EXPECT_LE(total, rec.trace.size());
  ASSERT_EQ(a.pairs.size(), 2u);
  EXPECT_EQ(a.pairs[0].scribble.size(), 2u);
  EXPECT_EQ(a.pairs[1].scribble.size(), 1u);
}

TEST(PairsFromBboxes, Examples) {
  Rng rng(3), rng2(3);
  const std::vector<std::pair<Box, std::string>> boxes = {
      {{0.1, 0.1, 0.3, 0.3}, "a"}, {{0.5, 0.5, 0.9, 0.6}, "b"}, {{0.0, 0.0, 1.0, 1.0}, "c"}};
  const auto r = pairs_from_bboxes("img", boxes, 10, rng);
  ASSERT_EQ(r.pairs.size(), 3u);
  for (const auto& p : r.pairs) EXPECT_EQ(p.scribble.size(), 10u);
  const auto again = pairs_from_bboxes("img", boxes, 10, rng2);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.pairs[i].scribble.points(), again.pairs[i].scribble.points());
  EXPECT_TRUE(pairs_from_bboxes("img", {}, 10, rng).pairs.empty());
  const auto skipped = pairs_from_bboxes("img", {{{0.2, 0.2, 0.2, 0.5}, "flat"}, {{0.1, 0.1, 0.2, 0.2}, "ok"}}, 4, rng);
  EXPECT_EQ(skipped.pairs.size(), 1u);
  EXPECT_EQ(skipped.warnings.size(), 1u);
}

TEST(ParseBoxCaptions, Format) {
  std::istringstream in(R"({"image_id":"a","box":[0.1,0.2,0.3,0.4],"text":"red ball"})" "\n");
  const auto b = parse_box_captions(in);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_DOUBLE_EQ(b[0].box.y1, 0.4);
  std::istringstream bad(R"({"image_id":"a","box":[0.1,0.2],"text":"x"})");
  EXPECT_THROW(parse_box_captions(bad), ParseError);
}

// ---------------------------------------------------------------- vocabulary

TEST(BuildVocab, FrequencyAndTies) {
  const auto v = build_vocab(std::vector<std::string>{"a a b"}, 1);
  EXPECT_EQ(v.words(), (std::vector<std::string>{"a"}));
  EXPECT_EQ(v.id("b"), PointTokenVocab::kUnk);
  EXPECT_EQ(build_vocab(std::vector<std::string>{"b a"}, 1).words(), (std::vector<std::string>{"a"}));
  EXPECT_THROW(build_vocab(std::vector<std::string>{}, 5), DomainError);
  EXPECT_THROW(build_vocab(std::vector<std::string>{"x"}, 0), ConfigError);
}

TEST(BuildVocab, RoundTripAndDisjointIds) {
  const auto v = build_vocab(std::vector<std::string>{"Question: what color is the star ? Answer:", "red star and blue circle"}, 100);
  const std::string t = "question : what color is the star ? answer :";
  EXPECT_EQ(v.decode(v.encode(t)), t);
  for (const auto& w : v.words()) EXPECT_GE(v.id(w), PointTokenVocab::kSize);
  EXPECT_EQ(v.encode("[3 4]"), tokenize_points("[3 4]"));
  EXPECT_EQ(split_words("Hello, World!"), (std::vector<std::string>{"hello", ",", "world", "!"}));
}

// ---------------------------------------------------------------- synthetic data

TEST(Synthetic, PairsPerImage) {
  SyntheticConfig cfg;
  cfg.grid = 4;
  cfg.min_objects = cfg.max_objects = 2;
  cfg.num_images = 30;
  const auto ds = make_synthetic_dataset(cfg);
  EXPECT_EQ(ds.regional.size(), 60u);
  EXPECT_EQ(ds.global.size(), 30u);
  for (const auto& g : ds.global) EXPECT_TRUE(g.pair.scribble.empty());
}

TEST(Synthetic, Deterministic) {
  SyntheticConfig cfg;
  cfg.num_images = 50;
  const auto a = make_synthetic_dataset(cfg);
  const auto b = make_synthetic_dataset(cfg);
  ASSERT_EQ(a.images, b.images);
  ASSERT_EQ(a.regional.size(), b.regional.size());
  for (std::size_t i = 0; i < a.regional.size(); ++i) {
    EXPECT_EQ(a.regional[i].pair.scribble.points(), b.regional[i].pair.scribble.points());
    EXPECT_EQ(a.regional[i].pair.text, b.regional[i].pair.text);
  }
  cfg.seed = 2;
  EXPECT_NE(make_synthetic_dataset(cfg).images, a.images);
}

TEST(Synthetic, ScribblesStayInsideTheirObject) {
  SyntheticConfig cfg;
  cfg.num_images = 400;
  const auto ds = make_synthetic_dataset(cfg);
  ASSERT_GE(ds.regional.size(), 1000u);
  for (const auto& p : ds.regional) {
    const auto& img = ds.images[p.image];
    const auto& obj = img.objects[static_cast<std::size_t>(p.object)];
    EXPECT_EQ(p.pair.text, obj.caption());
    for (const auto& q : p.pair.scribble.points()) {
      const int c = static_cast<int>(q.x() * img.grid);
      const int r = static_cast<int>(q.y() * img.grid);
      ASSERT_TRUE(obj.covers(r, c)) << p.pair.text << " at " << q.x() << "," << q.y();
    }
  }
}

TEST(Synthetic, ImageStructure) {
  SyntheticConfig cfg;
  cfg.num_images = 200;
  const auto ds = make_synthetic_dataset(cfg);
  for (const auto& img : ds.images) {
    EXPECT_GE(img.objects.size(), 2u);
    EXPECT_LE(img.objects.size(), 4u);
    std::set<std::string> colors, shapes;
    for (const auto& o : img.objects) {
      colors.insert(o.color);
      shapes.insert(o.shape);
    }
    EXPECT_EQ(colors.size(), img.objects.size());
    EXPECT_EQ(shapes.size(), img.objects.size());
    EXPECT_EQ(image_from_json(image_to_json(img)), img);
  }
  const auto& img = ds.images.front();
  std::string expected;
  for (const auto& o : img.objects) expected += (expected.empty() ? "" : " and ") + o.caption();
  EXPECT_EQ(img.global_caption(), expected);
}

TEST(Synthetic, ManifestRegenerates) {
  SyntheticConfig cfg;
  cfg.num_images = 20;
  cfg.seed = 77;
  const auto back = synthetic_config_from_manifest(synthetic_manifest(cfg));
  EXPECT_EQ(make_synthetic_dataset(back).images, make_synthetic_dataset(cfg).images);
}

TEST(Synthetic, ImageJsonValidation) {
  auto j = nlohmann::json::parse(R"({"id":"x","grid":4,"objects":[{"color":"red","shape":"star","row":0,"col":0,"h":2,"w":2},
                                     {"color":"blue","shape":"circle","row":1,"col":1}]})");
  EXPECT_THROW(image_from_json(j), DomainError);
  j["objects"][1]["row"] = 3;
  j["objects"][1]["col"] = 3;
  EXPECT_NO_THROW(image_from_json(j));
  j["objects"][1]["w"] = 2;
  EXPECT_THROW(image_from_json(j), DomainError);
}

// ---------------------------------------------------------------- visual encoder

TEST(VisualEncoder, ShapeDeterminismAndLocality) {
  SyntheticConfig cfg;
  cfg.colors = {"red", "green", "blue", "yellow"};
  cfg.shapes = {"circle", "square", "triangle", "star"};
  const VisualEncoder enc({16, cfg.colors, cfg.shapes, 7});
  Rng rng(1);
  const auto img = random_image(cfg, "a", rng);
  const auto f = enc.encode<double>(img);
  EXPECT_EQ(f.grid.rows(), 36);
  EXPECT_EQ(f.grid.cols(), 16);
  EXPECT_EQ(f.rows, 6);
  EXPECT_TRUE(f.grid == enc.encode<double>(img).grid);

  SyntheticImage other = img;
  // move one single-cell change: paint an empty cell with a new 1x1 object
  int er = -1, ec = -1;
  for (int r = 0; r < 6 && er < 0; ++r)
    for (int c = 0; c < 6 && er < 0; ++c)
      if (img.object_at(r, c) < 0) er = r, ec = c;
  ASSERT_GE(er, 0);
  other.objects.push_back({"red", "star", er, ec, 1, 1});
  const auto g = enc.encode<double>(other);
  for (int p = 0; p < 36; ++p) {
    const bool changed = !(f.grid.row(p) == g.grid.row(p));
    EXPECT_EQ(changed, p == er * 6 + ec) << p;
  }
  const VisualEncoder same({16, cfg.colors, cfg.shapes, 7});
  EXPECT_EQ(enc.checksum(), same.checksum());
  EXPECT_THROW(enc.encode<double>(SyntheticImage{"z", 2, {{"mauve", "star", 0, 0, 1, 1}}}), DomainError);
}

// ---------------------------------------------------------------- batching

namespace {

std::vector<TrainingExample> examples(std::size_t n, bool with_scribble) {
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Scribble s;
    if (with_scribble) s = Scribble({{0.1, 0.1}, {0.2, 0.3}, {0.4, 0.4}});
    out.push_back({i, s, {static_cast<int>(200 + i), PointTokenVocab::kEos}});
  }
  return out;
}

}  // namespace

TEST(MixedBatch, ExactHalvesOverHundredBatches) {
  MixedBatchSampler s(examples(37, true), examples(11, false), 8, 10, 5);
  for (int b = 0; b < 100; ++b) {
    const auto batch = s.next();
    ASSERT_EQ(batch.items.size(), 8u);
    int reg = 0, glob = 0;
    for (const auto& it : batch.items) {
      if (it.origin == Origin::kRegional) {
        ++reg;
        EXPECT_EQ(it.point_tokens.size(), 40u);
      } else {
        ++glob;
        EXPECT_TRUE(it.point_tokens.empty());
      }
    }
    EXPECT_EQ(reg, 4);
    EXPECT_EQ(glob, 4);
  }
}

TEST(MixedBatch, SameSeedSameStream) {
  MixedBatchSampler a(examples(20, true), examples(9, false), 6, 4, 77);
  MixedBatchSampler b(examples(20, true), examples(9, false), 6, 4, 77);
  for (int i = 0; i < 30; ++i) {
    const auto x = a.next(), y = b.next();
    for (std::size_t k = 0; k < x.items.size(); ++k) {
      EXPECT_EQ(x.items[k].image, y.items[k].image);
      EXPECT_EQ(x.items[k].point_tokens, y.items[k].point_tokens);
    }
  }
}

TEST(MixedBatch, EpochVisitsEveryRegionalExampleOnce) {
  MixedBatchSampler s(examples(12, true), examples(5, false), 8, 3, 1);
  std::multiset<std::size_t> seen;
  for (std::size_t i = 0; i < s.steps_per_epoch(); ++i)
    for (const auto& it : s.next().items)
      if (it.origin == Origin::kRegional) seen.insert(it.image);
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 12u);
}

TEST(MixedBatch, ConfigErrors) {
  EXPECT_THROW(MixedBatchSampler(examples(4, true), examples(4, false), 7, 3, 1), ConfigError);
  EXPECT_THROW(MixedBatchSampler(examples(4, true), {}, 8, 3, 1), ConfigError);
  MixedBatchSampler ablation(examples(4, true), examples(4, false), 4, 3, 1, true);
  for (const auto& it : ablation.next().items) EXPECT_TRUE(it.point_tokens.empty());
}

TEST(LMWarmup, EpisodesFitTheGrammar) {
  SyntheticConfig cfg;
  cfg.colors = {"red", "green"};
  cfg.shapes = {"circle", "star"};
  const auto vocab = build_vocab(model_corpus(cfg), 1000);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto ep = sample_text_episode(cfg, vocab, rng);
    ASSERT_FALSE(ep.target.empty());
    EXPECT_EQ(ep.target.back(), PointTokenVocab::kEos);
    for (int t : ep.target) EXPECT_NE(t, PointTokenVocab::kUnk);
  }
}
