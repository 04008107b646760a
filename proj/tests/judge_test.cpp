#include "decrim/judge.hpp"

#include <gtest/gtest.h>

#include <memory>

using namespace decrim;

namespace {

std::string repo_path(const std::string& rel) {
  return std::string(DECRIM_REPO_DIR) + "/" + rel;
}

RuleSpec rule(RuleSpec::Kind kind) {
  RuleSpec r;
  r.kind = kind;
  return r;
}

Constraint with_text(std::string text) {
  Constraint c;
  c.text = std::move(text);
  return c;
}

Constraint with_rule(std::string text, RuleSpec r) {
  Constraint c = with_text(std::move(text));
  c.rule = std::move(r);
  return c;
}

Instruction sample_instruction() {
  Instruction ins;
  ins.id = "j-1";
  ins.raw_text = "Write an invitation email.";
  return ins;
}

}  // namespace

TEST(CountWords, MaximalNonWhitespaceRuns) {
  EXPECT_EQ(count_words(""), 0);
  EXPECT_EQ(count_words("   "), 0);
  EXPECT_EQ(count_words("one"), 1);
  EXPECT_EQ(count_words("one two\tthree\nfour"), 4);
  EXPECT_EQ(count_words("  padded   words  "), 2);
  EXPECT_EQ(count_words("hyphen-ated counts once"), 3);
}

TEST(RuleCheck, WordBounds) {
  RuleSpec max = rule(RuleSpec::Kind::max_words);
  max.limit = 3;
  EXPECT_EQ(rule_check(max, "one two three"), Decision::followed);
  EXPECT_EQ(rule_check(max, "one two three four"), Decision::not_followed);

  RuleSpec min = rule(RuleSpec::Kind::min_words);
  min.limit = 3;
  EXPECT_EQ(rule_check(min, "one two three"), Decision::followed);
  EXPECT_EQ(rule_check(min, "one two"), Decision::not_followed);
}

TEST(RuleCheck, KeywordPresenceIsCaseInsensitive) {
  RuleSpec inc = rule(RuleSpec::Kind::include_keyword);
  inc.keyword = "Matcha";
  EXPECT_EQ(rule_check(inc, "I drank matcha tea."), Decision::followed);
  EXPECT_EQ(rule_check(inc, "I drank coffee."), Decision::not_followed);

  RuleSpec forbid = rule(RuleSpec::Kind::forbid_keyword);
  forbid.keyword = "blue";
  EXPECT_EQ(rule_check(forbid, "The sky is BLUE."), Decision::not_followed);
  EXPECT_EQ(rule_check(forbid, "The sky is azure."), Decision::followed);
}

TEST(RuleCheck, KeywordFrequencyRelations) {
  RuleSpec freq = rule(RuleSpec::Kind::keyword_frequency);
  freq.keyword = "solar";
  freq.count = 2;
  freq.relation = "at_most";
  EXPECT_EQ(rule_check(freq, "solar and Solar power"), Decision::followed);
  EXPECT_EQ(rule_check(freq, "solar solar solar"), Decision::not_followed);
  freq.relation = "at_least";
  EXPECT_EQ(rule_check(freq, "solar solar"), Decision::followed);
  EXPECT_EQ(rule_check(freq, "solar"), Decision::not_followed);
  freq.relation = "exactly";
  EXPECT_EQ(rule_check(freq, "solar once, solar twice"), Decision::followed);
  EXPECT_EQ(rule_check(freq, "solar"), Decision::not_followed);
}

TEST(RuleCheck, KeywordOccurrencesDoNotOverlap) {
  RuleSpec freq = rule(RuleSpec::Kind::keyword_frequency);
  freq.keyword = "aa";
  freq.count = 2;
  freq.relation = "exactly";
  EXPECT_EQ(rule_check(freq, "aaaa"), Decision::followed);   // two non-overlapping
  EXPECT_EQ(rule_check(freq, "aaa"), Decision::not_followed);  // only one
}

TEST(RuleCheck, BulletCounting) {
  RuleSpec bullets = rule(RuleSpec::Kind::bullet_count);
  bullets.count = 3;
  EXPECT_EQ(rule_check(bullets, "- a\n- b\n- c"), Decision::followed);
  EXPECT_EQ(rule_check(bullets, "* a\n* b\n\xE2\x80\xA2 c"), Decision::followed);
  EXPECT_EQ(rule_check(bullets, "intro\n- a\n- b\n- c\noutro"), Decision::followed);
  EXPECT_EQ(rule_check(bullets, "- a\n- b"), Decision::not_followed);
  // A hyphenated word opening a line is prose, not a bullet.
  EXPECT_EQ(rule_check(bullets, "-word\n- a\n- b\n- c"), Decision::followed);
}

TEST(RuleCheck, JsonParseable) {
  RuleSpec js = rule(RuleSpec::Kind::json_parseable);
  EXPECT_EQ(rule_check(js, R"({"ok": [1, 2]})"), Decision::followed);
  EXPECT_EQ(rule_check(js, "  {\"padded\": true}\n"), Decision::followed);
  EXPECT_EQ(rule_check(js, "not json at all"), Decision::not_followed);
  EXPECT_EQ(rule_check(js, ""), Decision::not_followed);
}

TEST(RuleCheck, StartsWithIsCaseSensitiveAfterLeadingWhitespace) {
  RuleSpec sw = rule(RuleSpec::Kind::starts_with);
  sw.keyword = "Dear";
  EXPECT_EQ(rule_check(sw, "Dear team,"), Decision::followed);
  EXPECT_EQ(rule_check(sw, "  Dear team,"), Decision::followed);
  EXPECT_EQ(rule_check(sw, "dear team,"), Decision::not_followed);
  EXPECT_EQ(rule_check(sw, ""), Decision::not_followed);
}

TEST(FormatConstraintDict, IndexColonTextPairs) {
  EXPECT_EQ(format_constraint_dict({}), "{}");
  EXPECT_EQ(format_constraint_dict({with_text("Use slang.")}), "{0: Use slang.}");
  EXPECT_EQ(format_constraint_dict({with_text("Use slang."), with_text("Be brief.")}),
            "{0: Use slang., 1: Be brief.}");
}

TEST(BuildFeedback, CollectsUnmetConstraintTexts) {
  const std::vector<Constraint> cs = {with_text("A"), with_text("B"), with_text("C")};
  std::vector<ConstraintVerdict> verdicts(3);
  for (int i = 0; i < 3; ++i) verdicts[i].constraint_index = i;
  verdicts[0].decision = Decision::followed;
  verdicts[1].decision = Decision::not_followed;
  verdicts[2].decision = Decision::not_followed;

  const Feedback fb = build_feedback(cs, verdicts);
  EXPECT_FALSE(fb.all_satisfied);
  ASSERT_EQ(fb.unmet.size(), 2u);
  EXPECT_EQ(fb.unmet[0], (std::pair<int, std::string>{1, "B"}));
  EXPECT_EQ(fb.unmet[1], (std::pair<int, std::string>{2, "C"}));

  verdicts[1].decision = verdicts[2].decision = Decision::followed;
  EXPECT_TRUE(build_feedback(cs, verdicts).all_satisfied);

  std::vector<ConstraintVerdict> stray(1);
  stray[0].constraint_index = 9;
  stray[0].decision = Decision::not_followed;
  EXPECT_THROW(build_feedback(cs, stray), std::invalid_argument);
}

TEST(JudgeConfigValidate, ModelStrategiesNeedBackendAndPrompts) {
  JudgeConfig cfg;
  cfg.strategy = JudgeStrategy::rule_based;
  EXPECT_NO_THROW(cfg.validate());
  cfg.strategy = JudgeStrategy::icl_const;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.backend = std::make_shared<MockBackend>();
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Critique, EmptyConstraintListIsEmpty) {
  JudgeConfig cfg;
  EXPECT_TRUE(critique(sample_instruction(), {}, "anything", cfg).empty());
}

TEST(Critique, RuleBasedThrowsOnRulelessConstraint) {
  JudgeConfig cfg;
  const std::vector<Constraint> cs = {
      with_rule("Three words max.", [] {
        RuleSpec r;
        r.kind = RuleSpec::Kind::max_words;
        r.limit = 3;
        return r;
      }()),
      with_text("Sound human.")};
  try {
    critique(sample_instruction(), cs, "too many words here now", cfg);
    FAIL() << "expected not-rule-checkable";
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("not rule-checkable"), std::string::npos) << what;
    EXPECT_NE(what.find("Sound human."), std::string::npos) << what;
  }
}

TEST(Critique, RuleBasedJudgesEachConstraintLocally) {
  JudgeConfig cfg;
  RuleSpec inc;
  inc.kind = RuleSpec::Kind::include_keyword;
  inc.keyword = "RSVP";
  RuleSpec max;
  max.kind = RuleSpec::Kind::max_words;
  max.limit = 5;
  const std::vector<Constraint> cs = {with_rule("Mention RSVP.", inc),
                                      with_rule("Five words max.", max)};
  const auto verdicts = critique(sample_instruction(), cs, "Please RSVP by Thursday evening.", cfg);
  ASSERT_EQ(verdicts.size(), 2u);
  EXPECT_EQ(verdicts[0].constraint_index, 0);
  EXPECT_EQ(verdicts[0].decision, Decision::followed);
  EXPECT_EQ(verdicts[1].decision, Decision::followed);
  EXPECT_EQ(verdicts[0].parse_status, ParseStatus::clean);
}

TEST(Critique, InstructionWiseStrategyMakesOneCall) {
  const PromptRegistry prompts = PromptRegistry::load_dir(repo_path("prompts"));
  auto backend = std::make_shared<MockBackend>();
  backend->enqueue(
      "First fine. Final Answer is Constraint followed <END> "
      "Second missing. Final Answer is Constraint not followed <END>");

  JudgeConfig cfg;
  cfg.strategy = JudgeStrategy::icl_inst;
  cfg.backend = backend;
  cfg.prompts = &prompts;
  const std::vector<Constraint> cs = {with_text("Ask about dietary restrictions."),
                                      with_text("Mention the RSVP deadline.")};
  const auto verdicts = critique(sample_instruction(), cs, "the email text", cfg);

  EXPECT_EQ(backend->call_count(), 1);
  ASSERT_EQ(verdicts.size(), 2u);
  EXPECT_EQ(verdicts[0].decision, Decision::followed);
  EXPECT_EQ(verdicts[1].decision, Decision::not_followed);
  EXPECT_EQ(verdicts[1].constraint_index, 1);

  // The one prompt carries the instruction, the response, and the indexed dict.
  const std::string prompt = backend->requests()[0].last_user_content();
  EXPECT_NE(prompt.find("Write an invitation email."), std::string::npos);
  EXPECT_NE(prompt.find("the email text"), std::string::npos);
  EXPECT_NE(prompt.find("{0: Ask about dietary restrictions., 1: Mention the RSVP deadline.}"),
            std::string::npos);
}

TEST(Critique, ConstraintWiseStrategiesMakeOneCallPerConstraint) {
  const PromptRegistry prompts = PromptRegistry::load_dir(repo_path("prompts"));
  for (const JudgeStrategy strategy : {JudgeStrategy::icl_const, JudgeStrategy::icl_const_cot}) {
    auto backend = std::make_shared<MockBackend>();
    backend->enqueue_all({"Constraint followed",
                          "Missing the deadline. Final Answer: Constraint not followed <END>"});
    JudgeConfig cfg;
    cfg.strategy = strategy;
    cfg.backend = backend;
    cfg.prompts = &prompts;
    const std::vector<Constraint> cs = {with_text("Ask about dietary restrictions."),
                                        with_text("Mention the RSVP deadline.")};
    const auto verdicts = critique(sample_instruction(), cs, "the email text", cfg);

    EXPECT_EQ(backend->call_count(), 2);
    ASSERT_EQ(verdicts.size(), 2u);
    EXPECT_EQ(verdicts[0].decision, Decision::followed);
    EXPECT_EQ(verdicts[0].constraint_index, 0);
    EXPECT_EQ(verdicts[1].decision, Decision::not_followed);
    EXPECT_EQ(verdicts[1].constraint_index, 1);

    // Each call binds the bare constraint text, not the indexed dict.
    const auto reqs = backend->requests();
    EXPECT_NE(reqs[0].last_user_content().find("Ask about dietary restrictions."),
              std::string::npos);
    EXPECT_EQ(reqs[0].last_user_content().find("Mention the RSVP deadline."), std::string::npos);
    EXPECT_NE(reqs[1].last_user_content().find("Mention the RSVP deadline."), std::string::npos);
  }
}

TEST(Critique, UnparseableRepliesFallToTheConfiguredDefault) {
  const PromptRegistry prompts = PromptRegistry::load_dir(repo_path("prompts"));
  auto backend = std::make_shared<MockBackend>();
  backend->enqueue("no verdict in this reply");
  JudgeConfig cfg;
  cfg.strategy = JudgeStrategy::icl_const;
  cfg.backend = backend;
  cfg.prompts = &prompts;
  cfg.unparseable_default = Decision::followed;
  const auto verdicts =
      critique(sample_instruction(), {with_text("Be brief.")}, "text", cfg);
  ASSERT_EQ(verdicts.size(), 1u);
  EXPECT_EQ(verdicts[0].decision, Decision::followed);
  EXPECT_EQ(verdicts[0].parse_status, ParseStatus::unparseable_defaulted);
}
