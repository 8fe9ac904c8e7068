#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "akd/error.hpp"
#include "akd/evalkit.hpp"
#include "support.hpp"

namespace akd {
namespace {

using testing::biased_referee;
using testing::TempDir;

std::shared_ptr<MockScript> script() { return std::make_shared<MockScript>(); }

// ---------------------------------------------------------------------------
// Multiple choice

TEST(ExtractChoice, FirstCapitalLetterAnywhere) {
  EXPECT_EQ(extract_choice(" B) because"), 'B');
  EXPECT_EQ(extract_choice("(c) no, D"), 'D');
  EXPECT_EQ(extract_choice("The answer is (B)"), 'T');
  EXPECT_EQ(extract_choice("\n\n  A"), 'A');
  EXPECT_EQ(extract_choice("42 z"), std::nullopt);
  EXPECT_EQ(extract_choice(""), std::nullopt);
}

// Independent oracle: linear scan with explicit range checks.
TEST(ExtractChoice, AgreesWithScanOnRandomText) {
  std::mt19937 rng(3);
  const std::string alphabet = "abcxyzABCZ019 .,()\n\xc3\xa9";
  for (int i = 0; i < 5000; ++i) {
    std::string s(rng() % 12, ' ');
    for (auto& c : s) c = alphabet[rng() % alphabet.size()];
    std::optional<char> expect;
    for (char c : s) {
      if (c >= 'A' && c <= 'Z') {
        expect = c;
        break;
      }
    }
    ASSERT_EQ(extract_choice(s), expect) << s;
  }
}

TEST(McqPrompt, LabelsChoicesAndNamesTheLastLabel) {
  const auto item = make_mcq_item("q1", "Which is a mammal?", {"shark", "whale", "trout"}, 'B', "bio");
  EXPECT_EQ(render_mcq_prompt(item),
            "Q: Which is a mammal?\n\nAnswer Choices: (A) shark (B) whale (C) trout\n"
            "A: Among A through C, the answer is");
}

TEST(McqItem, Validation) {
  EXPECT_THROW(make_mcq_item("x", "", {"a"}, 'A', "t"), PreconditionError);
  EXPECT_THROW(make_mcq_item("x", "q", {}, 'A', "t"), PreconditionError);
  EXPECT_THROW(make_mcq_item("x", "q", {"a", "b"}, 'C', "t"), PreconditionError);
  EXPECT_THROW(make_mcq_item("x", "q", std::vector<std::string>(27, "c"), 'A', "t"),
               PreconditionError);
  EXPECT_NO_THROW(make_mcq_item("x", "q", std::vector<std::string>(26, "c"), 'Z', "t"));
}

TEST(McqItem, LoadsJsonl) {
  TempDir dir;
  std::ofstream(dir / "items.jsonl")
      << R"({"question": "2+2?", "choices": ["3", "4"], "gold": "B", "task": "math"})" "\n"
      << R"({"id": "x7", "question": "Sky?", "choices": ["blue", "red"], "gold": "A", "task": "sci"})"
      << "\n";
  const auto items = load_mcq_items(dir / "items.jsonl");
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].gold, 'B');
  EXPECT_EQ(items[1].id, "x7");
  EXPECT_FALSE(items[0].id.empty());
}

std::vector<McqItem> three_items() {
  return {make_mcq_item("1", "first", {"a", "b"}, 'A', "t1"),
          make_mcq_item("2", "second", {"a", "b"}, 'B', "t1"),
          make_mcq_item("3", "third", {"a", "b", "c"}, 'C', "t2")};
}

AccuracyReport eval_with(const std::string& reply_1, const std::string& reply_2,
                         const std::string& reply_3) {
  auto s = script();
  s->on(Role::kStudent, reply_1, "first");
  s->on(Role::kStudent, reply_2, "second");
  s->on(Role::kStudent, reply_3, "third");
  MockBackend model(Role::kStudent, s);
  const auto items = three_items();
  return eval_mcq(model, items, role_profile(Role::kStudent), 2);
}

TEST(EvalMcq, AllCorrect) {
  const auto r = eval_with(" A", " (B)", "C, clearly");
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 100.0);
  EXPECT_EQ(r.backend_failures, 0u);
}

TEST(EvalMcq, AllWrong) {
  const auto r = eval_with(" B", "A", "The answer is C");
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.0);
  EXPECT_EQ(r.items[2].predicted, 'T');
}

TEST(EvalMcq, TwoOfThreeAndPerTask) {
  const auto r = eval_with("A", "B", "no idea");
  EXPECT_NEAR(r.overall_accuracy, 200.0 / 3.0, 1e-9);
  ASSERT_EQ(r.tasks.size(), 2u);
  EXPECT_EQ(r.tasks[0].task, "t1");
  EXPECT_DOUBLE_EQ(r.tasks[0].accuracy, 100.0);
  EXPECT_DOUBLE_EQ(r.tasks[1].accuracy, 0.0);
  EXPECT_DOUBLE_EQ(r.macro_accuracy, 50.0);
  EXPECT_EQ(r.items[2].predicted, std::nullopt);
  EXPECT_NE(format_accuracy_table(r).find("66.67"), std::string::npos);
}

TEST(EvalMcq, PromptWrappedInResponseTemplate) {
  auto s = script();
  std::string seen;
  s->on(Role::kStudent, [&](const MockRequest& r) {
    seen = std::string(r.user_text);
    return "A";
  });
  MockBackend model(Role::kStudent, s);
  const std::vector<McqItem> items = {three_items()[0]};
  eval_mcq(model, items, role_profile(Role::kStudent), 1);
  EXPECT_EQ(seen, render_response_prompt(render_mcq_prompt(items[0])).user_text);
}

TEST(EvalMcq, BackendFailureIsFlaggedAndWrong) {
  auto s = script();
  s->add(MockRule{Role::kStudent, "second", "", std::string(), true});
  s->on(Role::kStudent, "A");
  MockBackend model(Role::kStudent, s);
  const auto items = three_items();
  const auto r = eval_mcq(model, items, role_profile(Role::kStudent), 1);
  EXPECT_EQ(r.backend_failures, 1u);
  EXPECT_TRUE(r.items[1].backend_failure);
  EXPECT_FALSE(r.items[1].correct);
  EXPECT_NEAR(r.overall_accuracy, 100.0 / 3.0, 1e-9);
}

// ---------------------------------------------------------------------------
// Pairwise

TEST(RelativeScore, SumRatio) {
  const std::vector<double> c = {8, 9}, r = {8, 6};
  EXPECT_NEAR(relative_score(c, r), 100.0 * 17 / 14, 1e-12);
  const std::vector<double> same = {7, 7, 7};
  EXPECT_DOUBLE_EQ(relative_score(same, same), 100.0);
  const std::vector<double> half = {3}, full = {6};
  EXPECT_DOUBLE_EQ(relative_score(half, full), 50.0);
}

TEST(RelativeScore, InvalidInputs) {
  const std::vector<double> a = {1, 2}, b = {1}, zero = {0, 0}, empty;
  EXPECT_THROW(relative_score(a, b), PreconditionError);
  EXPECT_THROW(relative_score(empty, empty), PreconditionError);
  EXPECT_THROW(relative_score(a, zero), PreconditionError);
}

TEST(RelativeScore, ScaleInvariant) {
  std::mt19937 rng(8);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> c(1 + rng() % 10), r(c.size());
    for (auto& x : c) x = 1 + rng() % 10;
    for (auto& x : r) x = 1 + rng() % 10;
    const double k = 0.5 + (rng() % 100) / 10.0;
    auto ck = c, rk = r;
    for (auto& x : ck) x *= k;
    for (auto& x : rk) x *= k;
    EXPECT_NEAR(relative_score(ck, rk), relative_score(c, r), 1e-9);
  }
}

std::vector<PairwiseQuestion> questions(int n, const std::string& category = "") {
  std::vector<PairwiseQuestion> out;
  for (int i = 0; i < n; ++i) out.push_back({fmt::format("q{}", i), fmt::format("Question {}?", i), category});
  return out;
}

struct Pair {
  std::shared_ptr<MockScript> s = script();
  MockBackend candidate{Role::kStudent, s};
  MockBackend reference{Role::kTeacher, s};
  MockBackend rater{Role::kRater, s};

  Pair(double cand_q, double ref_q, double bias_1 = 0.0, double bias_2 = 0.0) {
    s->on(Role::kStudent, fmt::format("candidate quality={}", cand_q));
    s->on(Role::kTeacher, fmt::format("reference quality={}", ref_q));
    s->on(Role::kRater, biased_referee(bias_1, bias_2));
  }
};

PairwiseOptions opts(PairwiseSetting setting, int k = 3) {
  PairwiseOptions o;
  o.setting = setting;
  o.evidence_k = k;
  o.concurrency = 2;
  return o;
}

TEST(EvalPairwise, EqualQualityScoresHundred) {
  Pair p(7, 7);
  const auto qs = questions(5);
  for (auto setting : {PairwiseSetting::kSetting1, PairwiseSetting::kSetting2}) {
    const auto r = eval_pairwise(p.candidate, p.reference, p.rater, qs, opts(setting));
    EXPECT_DOUBLE_EQ(r.relative_score, 100.0);
    EXPECT_EQ(r.verdicts.size(), 5u);
  }
}

TEST(EvalPairwise, BetterCandidateScoresAboveHundred) {
  Pair p(9, 6);
  const auto r = eval_pairwise(p.candidate, p.reference, p.rater, questions(4),
                               opts(PairwiseSetting::kSetting2));
  EXPECT_DOUBLE_EQ(r.relative_score, 150.0);
}

TEST(EvalPairwise, SettingOneRatesOnceWithReferenceFirst) {
  Pair p(6, 6, 1.0);
  const auto r = eval_pairwise(p.candidate, p.reference, p.rater, questions(2),
                               opts(PairwiseSetting::kSetting1));
  EXPECT_EQ(r.evidence_k, 1);
  ASSERT_EQ(r.verdicts[0].evidence.size(), 1u);
  EXPECT_DOUBLE_EQ(r.verdicts[0].reference_score, 7.0);  // got the position-1 bias
  EXPECT_DOUBLE_EQ(r.verdicts[0].candidate_score, 6.0);
}

// Presenting both orders spreads a positional bias evenly over the two
// models: the margin between them matches the unbiased one, and a bias
// symmetric around zero leaves the scores themselves unchanged.
TEST(EvalPairwise, SettingTwoBalancesPositionBias) {
  for (double cq : {4.0, 6.0, 9.0}) {
    Pair unbiased(cq, 6);
    Pair plus_one(cq, 6, 1.0);
    Pair symmetric(cq, 6, 0.5, -0.5);
    const auto qs = questions(3);
    const auto o = opts(PairwiseSetting::kSetting2, 2);
    const auto u = eval_pairwise(unbiased.candidate, unbiased.reference, unbiased.rater, qs, o);
    const auto b = eval_pairwise(plus_one.candidate, plus_one.reference, plus_one.rater, qs, o);
    const auto s = eval_pairwise(symmetric.candidate, symmetric.reference, symmetric.rater, qs, o);
    for (std::size_t i = 0; i < qs.size(); ++i) {
      EXPECT_EQ(b.verdicts[i].evidence.size(), 4u);
      EXPECT_NEAR(b.verdicts[i].candidate_score - b.verdicts[i].reference_score,
                  u.verdicts[i].candidate_score - u.verdicts[i].reference_score, 1e-12);
      EXPECT_NEAR(s.verdicts[i].candidate_score, u.verdicts[i].candidate_score, 1e-12);
      EXPECT_NEAR(s.verdicts[i].reference_score, u.verdicts[i].reference_score, 1e-12);
    }
    EXPECT_NEAR(s.relative_score, 100.0 * cq / 6.0, 1e-9);
  }
}

TEST(EvalPairwise, FailuresAreExcludedAndListed) {
  auto s = script();
  s->add(MockRule{Role::kStudent, "Question 1?", "", std::string(), true});
  s->on(Role::kStudent, "candidate quality=8");
  s->on(Role::kTeacher, "reference quality=4");
  s->on(Role::kRater, "I cannot decide.", "Question 2?");
  s->on(Role::kRater, biased_referee(0.0));
  MockBackend cand(Role::kStudent, s), ref(Role::kTeacher, s), rater(Role::kRater, s);
  const auto r = eval_pairwise(cand, ref, rater, questions(4), opts(PairwiseSetting::kSetting2));
  ASSERT_EQ(r.excluded.size(), 2u);
  EXPECT_EQ(r.excluded[0].id, "q1");
  EXPECT_EQ(r.excluded[1].id, "q2");
  EXPECT_EQ(r.verdicts.size(), 2u);
  EXPECT_DOUBLE_EQ(r.relative_score, 200.0);
}

TEST(EvalPairwise, EverythingExcludedIsPrecondition) {
  auto s = script();
  s->add(MockRule{Role::kStudent, "", "", std::string(), true});
  MockBackend cand(Role::kStudent, s), ref(Role::kTeacher, s), rater(Role::kRater, s);
  EXPECT_THROW(eval_pairwise(cand, ref, rater, questions(2), opts(PairwiseSetting::kSetting1)),
               PreconditionError);
}

TEST(EvalPairwise, CategoriesAreScoredSeparately) {
  auto s = script();
  s->on(Role::kStudent, "candidate quality=9", "Question 0?");
  s->on(Role::kStudent, "candidate quality=3");
  s->on(Role::kTeacher, "reference quality=6");
  s->on(Role::kRater, biased_referee(0.0));
  MockBackend cand(Role::kStudent, s), ref(Role::kTeacher, s), rater(Role::kRater, s);
  auto qs = questions(2);
  qs[0].category = "writing";
  qs[1].category = "math";
  const auto r = eval_pairwise(cand, ref, rater, qs, opts(PairwiseSetting::kSetting2));
  ASSERT_EQ(r.categories.size(), 2u);
  EXPECT_EQ(r.categories[0].category, "math");
  EXPECT_DOUBLE_EQ(r.categories[0].relative_score, 50.0);
  EXPECT_DOUBLE_EQ(r.categories[1].relative_score, 150.0);
  EXPECT_DOUBLE_EQ(r.relative_score, 100.0);
  EXPECT_NE(format_relative_quality(r).find("100.00%"), std::string::npos);
}

TEST(PairwiseQuestions, LoadAcceptsInstructionKey) {
  TempDir dir;
  std::ofstream(dir / "q.jsonl") << R"({"question": "a?", "category": "x"})" "\n"
                                 << R"({"id": "k", "instruction": "b?"})" "\n";
  const auto qs = load_pairwise_questions(dir / "q.jsonl");
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_EQ(qs[0].category, "x");
  EXPECT_EQ(qs[1].question, "b?");
  EXPECT_EQ(qs[1].id, "k");
}

TEST(PairwiseSettingName, Parses) {
  EXPECT_EQ(parse_pairwise_setting("setting1"), PairwiseSetting::kSetting1);
  EXPECT_EQ(parse_pairwise_setting("setting2"), PairwiseSetting::kSetting2);
  EXPECT_THROW(parse_pairwise_setting("setting3"), PreconditionError);
}

}  // namespace
}  // namespace akd
