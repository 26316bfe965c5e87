#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "regionvlm/downstream.hpp"
#include "regionvlm/instances.hpp"
#include "support.hpp"

using namespace regionvlm;
using namespace regionvlm::testing;

namespace {

double mean_loss(const std::vector<StepRecord>& steps, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += steps[i].loss;
  return s / static_cast<double>(to - from);
}

SyntheticConfig eval_data(std::uint64_t seed = 77) {
  auto dc = model_data_config(trained_model());
  dc.seed = seed;
  return dc;
}

}  // namespace

// ---------------------------------------------------------------- training

TEST(Training, LossDropsOverTwoHundredSteps) {
  const auto& steps = trained().report.steps;
  ASSERT_GE(steps.size(), 200u);
  const double first = mean_loss(steps, 0, 10), last = mean_loss(steps, 190, 200);
  EXPECT_LE(last, 0.7 * first) << first << " -> " << last;
  for (const auto& s : steps) EXPECT_TRUE(std::isfinite(s.loss));
}

TEST(Training, FrozenPartsDoNotMove) {
  const auto& r = trained().report;
  EXPECT_EQ(r.lm_checksum_before, r.lm_checksum_after);
  EXPECT_EQ(r.encoder_checksum_before, r.encoder_checksum_after);
  EXPECT_EQ(r.lm_checksum_after, trained().sealed_lm.seal_checksum());
  EXPECT_TRUE(trained_model().lm.verify());
}

TEST(Training, SameSeedSameBytes) {
  TrainConfig cfg = trained().cfg;
  cfg.max_steps = 4;
  std::string bytes[2];
  for (auto& b : bytes) {
    auto s = prepare_training(cfg, trained().sealed_lm);
    train(s, cfg);
    b = serialize_model(s.model);
  }
  EXPECT_EQ(bytes[0], bytes[1]);
  cfg.seed += 1;
  auto s = prepare_training(cfg, trained().sealed_lm);
  train(s, cfg);
  EXPECT_NE(serialize_model(s.model), bytes[0]);
}

TEST(Training, ConfigParsing) {
  std::istringstream in("# comment\nlearning_rate = 0.01\nepochs=2\ncolors = red, blue\n\nk = 5\n");
  const auto c = parse_train_config(in);
  EXPECT_DOUBLE_EQ(c.adam.lr, 0.01);
  EXPECT_EQ(c.epochs, 2);
  EXPECT_EQ(c.colors, (std::vector<std::string>{"red", "blue"}));
  EXPECT_EQ(c.k, 5);
  std::istringstream bad("nonsense = 1\n");
  try {
    parse_train_config(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 1u);
  }
  std::istringstream no_eq("epochs 2\n");
  EXPECT_THROW(parse_train_config(no_eq), ParseError);
}

TEST(Training, EvalLoss) {
  const auto& f = trained();
  const auto& m = f.setup.model;
  EXPECT_THROW(eval_loss(m, {}), DomainError);
  auto ex = eval_examples(f.setup, 5);
  ASSERT_GE(ex.size(), 3u);
  EXPECT_DOUBLE_EQ(eval_loss(m, {ex[0]}), item_loss(m, *ex[0].features, ex[0].tokens, ex[0].target));
  const double fwd = eval_loss(m, ex);
  std::reverse(ex.begin(), ex.end());
  EXPECT_NEAR(eval_loss(m, ex), fwd, 1e-9);
  ASSERT_FALSE(f.report.epoch_eval_loss.empty());
  for (double l : f.report.epoch_eval_loss) EXPECT_TRUE(std::isfinite(l));
}

TEST(Training, PointsAreUsed) {
  // the model's loss on held-out regional pairs is lower with the real points
  // than with points from a different object
  const auto& f = trained();
  const auto& m = f.setup.model;
  double right = 0, wrong = 0;
  int n = 0;
  for (const auto& p : f.setup.held_out.regional) {
    const auto& img = f.setup.held_out.images[p.image];
    if (img.objects.size() < 2) continue;
    const auto& other = img.objects[(static_cast<std::size_t>(p.object) + 1) % img.objects.size()];
    Rng rng(derive_seed(3, static_cast<std::uint64_t>(n)));
    const auto target = with_eos(m.vocab.encode(p.pair.text));
    right += item_loss(m, f.setup.held_out_features[p.image], scribble_tokens(p.pair.scribble, m.k, rng), target);
    wrong += item_loss(m, f.setup.held_out_features[p.image],
                       scribble_tokens(scribble_in_object(other, img.grid, 16, rng), m.k, rng), target);
    ++n;
  }
  ASSERT_GT(n, 5);
  EXPECT_LT(right, wrong);
}

// ---------------------------------------------------------------- RIS

TEST(RIS, ArgminRules) {
  EXPECT_EQ(argmin_index({2.3, 1.1, 4.0}), 1u);
  EXPECT_EQ(argmin_index({1.5, 1.5, 1.5}), 0u);
  EXPECT_EQ(argmin_index({3.0, 1.0, 1.0}), 1u);
  EXPECT_THROW(argmin_index({}), DomainError);
}

TEST(RIS, SelectionIsTheArgminOfIndependentScores) {
  const auto& m = trained_model();
  for (const auto& inst : make_ris_instances(eval_data(), 8)) {
    std::vector<double> scores;
    for (const auto& p : inst.proposals) scores.push_back(ris_score(m, inst.image, p, inst.description, 9));
    const std::size_t brute = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
    const auto sel = ris_select(m, inst, 9);
    EXPECT_EQ(sel.index, brute);
    EXPECT_EQ(sel.scores, scores);

    // reversed proposal order picks the same mask
    RISInstance rev = inst;
    std::reverse(rev.proposals.begin(), rev.proposals.end());
    const auto rsel = ris_select(m, rev, 9);
    EXPECT_EQ(rev.proposals[rsel.index], inst.proposals[sel.index]);
  }
}

TEST(RIS, EmptyProposals) {
  const auto& m = trained_model();
  auto inst = make_ris_instances(eval_data(), 1).front();
  const GridMask empty(inst.image.grid, inst.image.grid);
  EXPECT_TRUE(std::isinf(ris_score(m, inst.image, empty, inst.description, 1)));
  inst.proposals.insert(inst.proposals.begin(), empty);
  EXPECT_NE(ris_select(m, inst, 1).index, 0u);
  inst.proposals = {empty, empty};
  EXPECT_THROW(ris_select(m, inst, 1), DomainError);
  inst.proposals.clear();
  EXPECT_THROW(ris_select(m, inst, 1), DomainError);
}

TEST(RIS, RobustnessRowsAscendAndDedupe) {
  const auto& m = trained_model();
  const auto inst = make_ris_instances(eval_data(), 4);
  const auto rows = robustness_report(m, inst, {7, 0, 3, 0}, 5);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].radius, 0);
  EXPECT_EQ(rows[1].radius, 3);
  EXPECT_EQ(rows[2].radius, 7);
  for (const auto& r : rows) {
    EXPECT_GE(r.miou, 0.0);
    EXPECT_LE(r.miou, 1.0);
  }
  // reordering instances changes nothing: seeds are keyed by id
  auto shuffled = inst;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto again = robustness_report(m, shuffled, {0, 3, 7}, 5);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_DOUBLE_EQ(again[i].miou, rows[i].miou);
  auto no_gt = inst;
  no_gt[0].ground_truth.reset();
  EXPECT_THROW(robustness_report(m, no_gt, {0}, 5), DomainError);
}

// ---------------------------------------------------------------- VCR

TEST(VCR, PromptLayout) {
  const auto& m = trained_model();
  const nn::Mat<float> z = nn::Mat<float>::Ones(3, m.lm.config().d_model);
  const std::vector<std::string> choices{"red star", "blue star", "red circle", "green square"};
  const auto p = vcr_prompt({z, z}, "what is [1]", choices, m.vocab);
  ASSERT_EQ(p.segments.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    if (i % 2 == 0)
      EXPECT_TRUE(std::holds_alternative<TextSegment>(p.segments[i])) << i;
    else
      EXPECT_TRUE(std::holds_alternative<SoftSegment<float>>(p.segments[i])) << i;
  }
  EXPECT_EQ(p.soft_segment_count(), 2u);
  const auto none = vcr_prompt({}, "what is here", choices, m.vocab);
  EXPECT_EQ(none.segments.size(), 1u);
  EXPECT_EQ(none.soft_segment_count(), 0u);
  EXPECT_THROW(vcr_prompt({z, z}, "what is [2]", choices, m.vocab), DomainError);
  EXPECT_THROW(vcr_prompt({z}, "what is [0]", {"a [1]", "b", "c", "d"}, m.vocab), DomainError);
}

TEST(VCR, AnswerIsArgminOfChoiceLosses) {
  const auto& m = trained_model();
  for (const auto& inst : make_vcr_instances(eval_data(3), 5)) {
    const auto a = vcr_answer(m, inst, 4);
    ASSERT_EQ(a.losses.size(), 4u);
    EXPECT_EQ(a.choice, static_cast<int>(std::min_element(a.losses.begin(), a.losses.end()) - a.losses.begin()) + 1);
    EXPECT_GE(a.choice, 1);
    EXPECT_LE(a.choice, 4);
    EXPECT_EQ(vcr_answer(m, inst, 4).losses, a.losses);
  }
  auto bad = make_vcr_instances(eval_data(3), 1).front();
  bad.choices.pop_back();
  EXPECT_THROW(vcr_answer(m, bad, 4), DomainError);
}

// ---------------------------------------------------------------- VQA

TEST(VQA, UsesTemplateAndNoPoints) {
  const auto& m = trained_model();
  const auto inst = make_vqa_instances(eval_data(4), 1).front();
  const auto a = vqa_answer(m, inst.image, inst.question);
  EXPECT_EQ(a.prompt_text, "Question: " + inst.question + " Answer:");
  EXPECT_EQ(a.point_tokens, 0u);
  EXPECT_EQ(vqa_answer(m, inst.image, inst.question).answer, a.answer);
  EXPECT_LE(m.vocab.encode(a.answer).size(), static_cast<std::size_t>(kDefaultMaxCaptionTokens));
}

// ---------------------------------------------------------------- dialogue

TEST(Dialogue, FirstScribbledTurnMatchesCaptioning) {
  const auto& m = trained_model();
  const auto inst = make_caption_instances(eval_data(5), 3);
  for (const auto& c : inst) {
    Rng rng(derive_seed(42, 0));
    const std::string cap = caption_region(m, c.image, c.scribble, rng);
    const auto r = dialogue_step(m, c.image, {}, "", c.scribble.points(), 42);
    EXPECT_EQ(r.reply, cap);
    EXPECT_FALSE(r.truncated);
    ASSERT_EQ(r.state.turns.size(), 2u);
    EXPECT_EQ(r.state.turns[0].role, "user");
    EXPECT_EQ(r.state.turns[1].role, "model");
    EXPECT_EQ(r.state.turns[1].text, r.reply);
  }
}

TEST(Dialogue, HistoryGrowsAndTruncates) {
  const auto& m = trained_model();
  const auto c = make_caption_instances(eval_data(6), 1).front();
  DialogueState st;
  bool truncated = false;
  for (int turn = 0; turn < 12; ++turn) {
    const auto r = dialogue_step(m, c.image, st, "what color is the " + c.image.objects[0].shape, c.scribble.points(), 1);
    EXPECT_EQ(r.state.turns.size(), st.turns.size() + 2);
    truncated = truncated || r.truncated;
    st = r.state;
  }
  EXPECT_TRUE(truncated);  // 12 scribbled turns cannot fit in the context window
  DialogueState bad;
  bad.turns.push_back({"model", "hi", std::nullopt});
  bad.turns.push_back({"user", "hi", std::nullopt});
  EXPECT_THROW(dialogue_step(m, c.image, bad, "x", std::nullopt, 1), DomainError);
  DialogueState odd;
  odd.turns.push_back({"user", "hi", std::nullopt});
  EXPECT_THROW(dialogue_step(m, c.image, odd, "x", std::nullopt, 1), DomainError);
}

// ---------------------------------------------------------------- instance files

TEST(Instances, RoundTrips) {
  const auto dc = eval_data(8);
  {
    const auto ris = make_ris_instances(dc, 3);
    std::stringstream ss;
    for (const auto& r : ris) ss << ris_to_json(r).dump() << '\n';
    const auto back = load_ris_instances(ss);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(back[i].id, ris[i].id);
      EXPECT_EQ(back[i].image, ris[i].image);
      EXPECT_EQ(back[i].proposals, ris[i].proposals);
      EXPECT_EQ(back[i].ground_truth, ris[i].ground_truth);
    }
  }
  {
    // proposals from a separate file keyed by image id
    const auto ris = make_ris_instances(dc, 2);
    std::stringstream inst, props;
    for (const auto& r : ris) {
      inst << ris_to_json(r, false).dump() << '\n';
      for (std::size_t k = 0; k < r.proposals.size(); ++k)
        props << proposal_to_json(r.image.id, static_cast<int>(k), r.proposals[k]).dump() << '\n';
    }
    const auto map = load_proposals(props);
    const auto back = load_ris_instances(inst, &map);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(back[i].proposals, ris[i].proposals);
    std::stringstream again(ris_to_json(ris[0], false).dump());
    EXPECT_THROW(load_ris_instances(again), ParseError);
  }
  {
    const auto vcr = make_vcr_instances(dc, 3);
    std::stringstream ss;
    for (const auto& v : vcr) ss << vcr_to_json(v).dump() << '\n';
    const auto back = load_vcr_instances(ss);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(back[i].choices, vcr[i].choices);
      EXPECT_EQ(back[i].answer, vcr[i].answer);
      EXPECT_EQ(back[i].objects, vcr[i].objects);
      EXPECT_EQ(vcr[i].choices[static_cast<std::size_t>(*vcr[i].answer - 1)],
                vcr[i].image.objects[static_cast<std::size_t>(std::stoi(vcr[i].question.substr(vcr[i].question.find('[') + 1)))]
                    .caption());
    }
  }
  {
    const auto vqa = make_vqa_instances(dc, 3);
    std::stringstream ss;
    for (const auto& v : vqa) ss << vqa_to_json(v).dump() << '\n';
    const auto back = load_vqa_instances(ss);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back[i].answer, vqa[i].answer);
  }
  {
    const auto caps = make_caption_instances(dc, 3);
    std::stringstream ss;
    for (const auto& c : caps) ss << caption_to_json(c).dump() << '\n';
    const auto back = load_caption_instances(ss);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(back[i].scribble.points().size(), caps[i].scribble.points().size());
      EXPECT_EQ(back[i].reference, caps[i].reference);
      EXPECT_EQ(back[i].region, caps[i].region);
    }
  }
}

TEST(Instances, BadLinesReportTheLineNumber) {
  std::stringstream ss("{\"id\":\"a\"}\n");
  try {
    load_vqa_instances(ss);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 1u);
  }
  std::stringstream pts("{\"id\":\"c\",\"image\":{\"grid\":2,\"objects\":[]},\"points\":[[0.1]]}\n");
  EXPECT_THROW(load_caption_instances(pts), ParseError);
  EXPECT_EQ(points_from_json(nlohmann::json::parse(R"([[0.1,0.2],{"x":0.3,"y":0.4}])")).size(), 2u);
}
