#include "decrim/dataprep.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>

#include "decrim/prompts.hpp"

namespace fs = std::filesystem;
using namespace decrim;

namespace {

std::string repo_path(const std::string& rel) {
  return std::string(DECRIM_REPO_DIR) + "/" + rel;
}

const PromptRegistry& prompts() {
  static const PromptRegistry reg = PromptRegistry::load_dir(repo_path("prompts"));
  return reg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ConvRecord user_record(std::string id, std::string content) {
  ConvRecord r;
  r.id = std::move(id);
  r.turns = {{"user", std::move(content)}};
  return r;
}

std::vector<std::string> ids_of(const std::vector<ConvRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.id);
  std::sort(out.begin(), out.end());
  return out;
}

// Classifier scripted for the bundled conversations fixture: each rule's reply
// list is consumed in stage order (code filter first, then constraint filter).
std::shared_ptr<MockBackend> fixture_classifier() {
  auto backend = std::make_shared<MockBackend>();
  backend->add_rule("quarterly newsletter", {"No", "Yes"});
  backend->add_rule("def fib", {"Yes"});
  backend->add_rule("packing list", {"No", "Yes"});
  backend->add_rule("capital of France", {"No", "No"});
  return backend;
}

StageDeps deps_with(std::shared_ptr<MockBackend> classifier, std::string review_path = "") {
  StageDeps deps;
  deps.classifier = std::move(classifier);
  deps.prompts = &prompts();
  deps.review_path = std::move(review_path);
  return deps;
}

const StageStats& stats_for(const std::vector<StageStats>& stats, const std::string& stage) {
  for (const auto& s : stats) {
    if (s.stage == stage) return s;
  }
  throw std::runtime_error("no stats for stage " + stage);
}

}  // namespace

TEST(ConvRecord, RendersUserTurnsOnly) {
  ConvRecord r;
  r.id = "x";
  r.turns = {{"system", "be terse"},
             {"user", "first ask"},
             {"assistant", "an answer"},
             {"user", "second ask"}};
  EXPECT_EQ(r.user_text(), "first ask\nsecond ask");
  EXPECT_EQ(r.dialog_rendering(), "Human: first ask\nHuman: second ask");
}

TEST(ConvRecord, JsonAcceptsNumericIdsAndRejectsUnknownRoles) {
  const ConvRecord r = conv_record_from_json(
      json{{"id", 7}, {"turns", json::array({json{{"role", "user"}, {"content", "hi"}}})}});
  EXPECT_EQ(r.id, "7");
  EXPECT_THROW(conv_record_from_json(json{
                   {"id", "x"},
                   {"turns", json::array({json{{"role", "narrator"}, {"content", "hi"}}})}}),
               std::invalid_argument);
}

TEST(LoadConversations, ReadsTheBundledFixture) {
  const auto records =
      load_conversations(repo_path("tests/fixtures/conversations_sample.jsonl"));
  ASSERT_EQ(records.size(), 6u);
  EXPECT_EQ(records[0].id, "c-1");
  EXPECT_EQ(records[0].turns.size(), 2u);
  EXPECT_EQ(records[4].turns.size(), 3u);
}

TEST(LoadConversations, ReportsLineNumbersAndDuplicateIds) {
  const fs::path dir = fresh_dir("decrim_conv_load");
  const std::string path = (dir / "bad.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"id": "a", "turns": []})" << "\n";
    out << "not json" << "\n";
  }
  try {
    load_conversations(path);
    FAIL() << "expected a parse failure";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  {
    std::ofstream out(path);
    out << R"({"id": "a", "turns": []})" << "\n";
    out << R"({"id": "a", "turns": []})" << "\n";
  }
  EXPECT_THROW(load_conversations(path), std::runtime_error);
  fs::remove_all(dir);
}

TEST(StageOrder, DefaultRunsSixStagesInSequence) {
  const auto order = default_stage_order();
  ASSERT_EQ(order.size(), 6u);
  EXPECT_EQ(order[0], StageKind::strip_assistant);
  EXPECT_EQ(order[1], StageKind::language_filter);
  EXPECT_EQ(order[2], StageKind::code_filter);
  EXPECT_EQ(order[3], StageKind::first_turn_only);
  EXPECT_EQ(order[4], StageKind::constraint_filter);
  EXPECT_EQ(order[5], StageKind::review_export);
  for (const StageKind s : order) {
    EXPECT_EQ(stage_kind_from_string(to_string(s)), s);
  }
  EXPECT_THROW(stage_kind_from_string("rinse"), std::invalid_argument);
}

TEST(ParseYesNo, MatchesLeadingWordsAtBoundaries) {
  EXPECT_EQ(parse_yes_no("Yes"), YesNo::yes);
  EXPECT_EQ(parse_yes_no("yes, it does."), YesNo::yes);
  EXPECT_EQ(parse_yes_no("  \"Yes\""), YesNo::yes);
  EXPECT_EQ(parse_yes_no("'No'"), YesNo::no);
  EXPECT_EQ(parse_yes_no("NO WAY"), YesNo::no);
  EXPECT_EQ(parse_yes_no("No."), YesNo::no);
  // A word that merely starts with yes/no is not an answer.
  EXPECT_EQ(parse_yes_no("Yesterday"), YesNo::drift);
  EXPECT_EQ(parse_yes_no("Nothing to report"), YesNo::drift);
  EXPECT_EQ(parse_yes_no("Maybe"), YesNo::drift);
  EXPECT_EQ(parse_yes_no(""), YesNo::drift);
}

TEST(FilterStage, StripAssistantDropsRecordsWithNoUserText) {
  ConvRecord mixed;
  mixed.id = "m";
  mixed.turns = {{"user", "ask"}, {"assistant", "answer"}};
  ConvRecord assistant_only;
  assistant_only.id = "a";
  assistant_only.turns = {{"assistant", "hello"}};

  const StageOutcome out =
      filter_stage({mixed, assistant_only}, StageKind::strip_assistant, {});
  ASSERT_EQ(out.kept.size(), 1u);
  EXPECT_EQ(out.kept[0].id, "m");
  EXPECT_EQ(out.kept[0].turns.size(), 1u);  // assistant turn removed
  ASSERT_EQ(out.dropped.size(), 1u);
  EXPECT_EQ(out.dropped[0].id, "a");
}

TEST(FilterStage, LanguageFilterUsesTheInjectedDetector) {
  const ConvRecord ascii = user_record("en", "plain english text");
  const ConvRecord cyrillic = user_record("ru", "Вишнёвый сад расцветает весной");
  StageOutcome out = filter_stage({ascii, cyrillic}, StageKind::language_filter, {});
  ASSERT_EQ(out.kept.size(), 1u);
  EXPECT_EQ(out.kept[0].id, "en");
  EXPECT_EQ(out.dropped[0].id, "ru");

  class RejectAll : public LanguageDetector {
   public:
    bool is_target_language(const std::string&) const override { return false; }
  };
  StageDeps deps;
  deps.language = std::make_shared<RejectAll>();
  out = filter_stage({ascii}, StageKind::language_filter, deps);
  EXPECT_TRUE(out.kept.empty());
  EXPECT_EQ(out.dropped.size(), 1u);
}

TEST(FilterStage, CodeFilterRoutesEveryClassifierOutcome) {
  const std::vector<ConvRecord> records = {
      user_record("is-code", "please fix my python loop"),
      user_record("no-code", "write a short story about rain"),
      user_record("drifts", "summarize this memo"),
      user_record("recovers", "draft a speech for the gala"),
      user_record("fails", "this one has no scripted reply"),
  };
  auto classifier = std::make_shared<MockBackend>();
  classifier->add_rule("python loop", {"Yes"});
  classifier->add_rule("short story", {"No"});
  classifier->add_rule("summarize this memo", {"Hmm", "Hard to say"});  // drift twice
  classifier->add_rule("speech for the gala", {"Unsure", "Yes"});       // drift then recover

  const StageOutcome out =
      filter_stage(records, StageKind::code_filter, deps_with(classifier));
  EXPECT_EQ(ids_of(out.dropped), (std::vector<std::string>{"is-code", "recovers"}));
  EXPECT_EQ(ids_of(out.kept), (std::vector<std::string>{"no-code"}));
  EXPECT_EQ(ids_of(out.flagged), (std::vector<std::string>{"drifts"}));
  EXPECT_EQ(ids_of(out.retry), (std::vector<std::string>{"fails"}));

  // Every record lands in exactly one bucket.
  const size_t total =
      out.kept.size() + out.dropped.size() + out.flagged.size() + out.retry.size();
  EXPECT_EQ(total, records.size());

  // The classifier saw the dialog rendering, not the raw record.
  const auto reqs = classifier->requests();
  EXPECT_NE(reqs[0].last_user_content().find("Human: please fix my python loop"),
            std::string::npos);
}

TEST(FilterStage, ConstraintFilterKeepsYesAnswers) {
  const std::vector<ConvRecord> records = {
      user_record("constrained", "write a haiku with exactly three lines"),
      user_record("plain", "tell me about otters"),
  };
  auto classifier = std::make_shared<MockBackend>();
  classifier->add_rule("exactly three lines", {"Yes"});
  classifier->add_rule("otters", {"No"});
  const StageOutcome out =
      filter_stage(records, StageKind::constraint_filter, deps_with(classifier));
  EXPECT_EQ(ids_of(out.kept), (std::vector<std::string>{"constrained"}));
  EXPECT_EQ(ids_of(out.dropped), (std::vector<std::string>{"plain"}));
}

TEST(FilterStage, ClassifierStagesRequireBackendAndPrompts) {
  const std::vector<ConvRecord> records = {user_record("x", "hello")};
  EXPECT_THROW(filter_stage(records, StageKind::code_filter, {}), std::invalid_argument);
  StageDeps no_prompts;
  no_prompts.classifier = std::make_shared<MockBackend>();
  EXPECT_THROW(filter_stage(records, StageKind::constraint_filter, no_prompts),
               std::invalid_argument);
}

TEST(FilterStage, FirstTurnOnlyTrimsToTheFirstUserTurn) {
  ConvRecord multi;
  multi.id = "m";
  multi.turns = {{"system", "be kind"}, {"user", "first"}, {"user", "second"}};
  ConvRecord userless;
  userless.id = "u";
  userless.turns = {{"system", "be kind"}};
  const StageOutcome out = filter_stage({multi, userless}, StageKind::first_turn_only, {});
  ASSERT_EQ(out.kept.size(), 1u);
  ASSERT_EQ(out.kept[0].turns.size(), 1u);
  EXPECT_EQ(out.kept[0].turns[0].content, "first");
  EXPECT_EQ(ids_of(out.dropped), (std::vector<std::string>{"u"}));
}

TEST(FilterStage, ReviewExportPassesRecordsThroughAndWritesTheFile) {
  const fs::path dir = fresh_dir("decrim_review_export");
  const std::string review = (dir / "review.jsonl").string();
  const std::vector<ConvRecord> records = {user_record("r1", "one"), user_record("r2", "two")};
  StageDeps deps;
  deps.review_path = review;
  const StageOutcome out = filter_stage(records, StageKind::review_export, deps);
  EXPECT_EQ(out.kept.size(), 2u);
  std::ifstream in(review);
  std::string line;
  long rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);
  fs::remove_all(dir);
}

TEST(DecomposeInstruction, ReattachesTheMissingTaskHeader) {
  MockBackend backend;
  backend.enqueue(
      "Compose a limerick about tea.\n"
      "Translated Context: None.\n"
      "Translated Constraints:\n"
      "1. Use five lines.\n"
      "2. Mention milk.");
  const Decomposed d =
      decompose_instruction(user_record("d1", "limerick please, five lines, mention milk"),
                            backend, prompts());
  EXPECT_FALSE(d.flagged);
  EXPECT_EQ(d.task, "Compose a limerick about tea.");
  EXPECT_EQ(d.context, "");
  EXPECT_EQ(d.constraints, (std::vector<std::string>{"Use five lines.", "Mention milk."}));
  // The backend saw the record's own request text.
  EXPECT_NE(backend.requests()[0].last_user_content().find("limerick please"),
            std::string::npos);
}

TEST(DecomposeInstruction, KeepsAnExplicitHeaderUnchanged) {
  MockBackend backend;
  backend.enqueue(
      "Translated Task: Write a toast.\n"
      "Translated Context: None\n"
      "Translated Constraints:\n"
      "1. Keep it short.");
  const Decomposed d = decompose_instruction(user_record("d2", "toast"), backend, prompts());
  EXPECT_FALSE(d.flagged);
  EXPECT_EQ(d.task, "Write a toast.");
  EXPECT_EQ(d.constraints, (std::vector<std::string>{"Keep it short."}));
}

TEST(DecomposeInstruction, ParseFailureFlagsTheRecord) {
  MockBackend backend;
  backend.enqueue("I cannot help with that request.");
  const Decomposed d = decompose_instruction(user_record("d3", "x"), backend, prompts());
  EXPECT_TRUE(d.flagged);
  EXPECT_EQ(d.raw_output, "I cannot help with that request.");
  EXPECT_TRUE(d.task.empty());
}

TEST(RunDataprep, FixtureEndToEndAccounting) {
  const fs::path dir = fresh_dir("decrim_dataprep_e2e");
  const auto input = load_conversations(repo_path("tests/fixtures/conversations_sample.jsonl"));
  DataprepConfig cfg;
  cfg.deps = deps_with(fixture_classifier(), (dir / "review.jsonl").string());
  const DataprepResult result = run_dataprep(input, cfg);

  EXPECT_FALSE(result.incomplete_stage);
  EXPECT_EQ(ids_of(result.survivors), (std::vector<std::string>{"c-1", "c-5"}));
  for (const auto& r : result.survivors) {
    ASSERT_EQ(r.turns.size(), 1u);  // first user turn only
    EXPECT_EQ(r.turns[0].role, "user");
  }

  ASSERT_EQ(result.stats.size(), 6u);
  EXPECT_EQ(stats_for(result.stats, "strip_assistant").input, 6);
  EXPECT_EQ(stats_for(result.stats, "strip_assistant").dropped, 1);  // assistant-only
  EXPECT_EQ(stats_for(result.stats, "language_filter").dropped, 1);  // non-ascii
  EXPECT_EQ(stats_for(result.stats, "code_filter").dropped, 1);      // code request
  EXPECT_EQ(stats_for(result.stats, "first_turn_only").kept, 3);
  EXPECT_EQ(stats_for(result.stats, "constraint_filter").dropped, 1);  // unconstrained
  EXPECT_EQ(stats_for(result.stats, "review_export").kept, 2);
  EXPECT_DOUBLE_EQ(stats_for(result.stats, "code_filter").retention(), 3.0 / 4.0);

  // Review export wrote one row per survivor.
  std::ifstream in((dir / "review.jsonl").string());
  std::string line;
  long rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);
  fs::remove_all(dir);
}

TEST(RunDataprep, CheckpointedRerunSkipsEveryCompletedStage) {
  const fs::path dir = fresh_dir("decrim_dataprep_ckpt");
  const auto input = load_conversations(repo_path("tests/fixtures/conversations_sample.jsonl"));
  DataprepConfig cfg;
  cfg.checkpoint_dir = dir.string();
  cfg.deps = deps_with(fixture_classifier());
  const DataprepResult first = run_dataprep(input, cfg);
  EXPECT_FALSE(first.incomplete_stage);
  EXPECT_TRUE(fs::exists(dir / "00_strip_assistant.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "02_code_filter.stats.json"));
  EXPECT_TRUE(fs::exists(dir / "05_review_export.jsonl"));

  // A rerun must not touch the classifier at all: this one would throw.
  cfg.deps.classifier = std::make_shared<MockBackend>();
  const DataprepResult second = run_dataprep(input, cfg);
  EXPECT_FALSE(second.incomplete_stage);
  EXPECT_EQ(ids_of(second.survivors), ids_of(first.survivors));
  ASSERT_EQ(second.stats.size(), first.stats.size());
  for (size_t i = 0; i < first.stats.size(); ++i) {
    EXPECT_EQ(second.stats[i].stage, first.stats[i].stage);
    EXPECT_EQ(second.stats[i].input, first.stats[i].input);
    EXPECT_EQ(second.stats[i].kept, first.stats[i].kept);
    EXPECT_EQ(second.stats[i].dropped, first.stats[i].dropped);
  }

  const auto stats = pipeline_stats(dir.string());
  ASSERT_EQ(stats.size(), 6u);
  EXPECT_EQ(stats[0].stage, "strip_assistant");
  EXPECT_EQ(stats[5].stage, "review_export");
  EXPECT_EQ(stats[2].input, first.stats[2].input);
  fs::remove_all(dir);
}

TEST(RunDataprep, InterruptedRunResumesToTheUninterruptedResult) {
  const std::vector<ConvRecord> input = {
      user_record("r1", "alpha task: write a sonnet with a strict rhyme scheme"),
      user_record("r2", "bravo task: summarize the report in three sentences"),
      user_record("r3", "charlie task: implement quicksort in rust"),
  };
  auto full_classifier = [] {
    auto backend = std::make_shared<MockBackend>();
    backend->add_rule("alpha task", {"No", "Yes"});
    backend->add_rule("bravo task", {"No", "Yes"});
    backend->add_rule("charlie task", {"Yes"});
    return backend;
  };

  // Reference: one uninterrupted run.
  const fs::path ref_dir = fresh_dir("decrim_dataprep_ref");
  DataprepConfig ref_cfg;
  ref_cfg.checkpoint_dir = ref_dir.string();
  ref_cfg.deps = deps_with(full_classifier());
  const DataprepResult reference = run_dataprep(input, ref_cfg);
  EXPECT_FALSE(reference.incomplete_stage);
  EXPECT_EQ(ids_of(reference.survivors), (std::vector<std::string>{"r1", "r2"}));

  // Interrupted: the classifier dies mid code-filter (two records unmatched).
  const fs::path dir = fresh_dir("decrim_dataprep_resume");
  DataprepConfig cfg;
  cfg.checkpoint_dir = dir.string();
  auto partial = std::make_shared<MockBackend>();
  partial->add_rule("alpha task", {"No"});
  cfg.deps = deps_with(partial);
  const DataprepResult broken = run_dataprep(input, cfg);
  ASSERT_TRUE(broken.incomplete_stage);
  EXPECT_EQ(*broken.incomplete_stage, "code_filter");
  EXPECT_EQ(stats_for(broken.stats, "code_filter").retry, 2);
  EXPECT_TRUE(fs::exists(dir / "01_language_filter.jsonl"));
  EXPECT_FALSE(fs::exists(dir / "02_code_filter.jsonl"));  // incomplete: no checkpoint

  // Resume with a healthy classifier: the completed stages are skipped and the
  // broken stage re-runs from its checkpointed input.
  cfg.deps = deps_with(full_classifier());
  const DataprepResult resumed = run_dataprep(input, cfg);
  EXPECT_FALSE(resumed.incomplete_stage);
  EXPECT_EQ(ids_of(resumed.survivors), ids_of(reference.survivors));
  ASSERT_EQ(resumed.stats.size(), reference.stats.size());
  for (size_t i = 0; i < reference.stats.size(); ++i) {
    EXPECT_EQ(resumed.stats[i].stage, reference.stats[i].stage);
    EXPECT_EQ(resumed.stats[i].input, reference.stats[i].input);
    EXPECT_EQ(resumed.stats[i].kept, reference.stats[i].kept);
    EXPECT_EQ(resumed.stats[i].dropped, reference.stats[i].dropped);
    EXPECT_EQ(resumed.stats[i].flagged, reference.stats[i].flagged);
    EXPECT_EQ(resumed.stats[i].retry, reference.stats[i].retry);
  }
  fs::remove_all(ref_dir);
  fs::remove_all(dir);
}

TEST(StageStats, RetentionHandlesEmptyInput) {
  StageStats s;
  s.stage = "code_filter";
  EXPECT_DOUBLE_EQ(s.retention(), 0.0);
  s.input = 4;
  s.kept = 3;
  EXPECT_DOUBLE_EQ(s.retention(), 0.75);
  const json j = s.to_json();
  EXPECT_EQ(j["stage"], "code_filter");
  EXPECT_DOUBLE_EQ(j["retention"].get<double>(), 0.75);
}

TEST(ExportDataset, WritesDecomposedRowsAndRoutesFlaggedToReview) {
  const fs::path dir = fresh_dir("decrim_export_dataset");
  const std::string out_path = (dir / "dataset.jsonl").string();
  const std::string review_path = (dir / "review.jsonl").string();

  const std::vector<ConvRecord> records = {
      user_record("e-1", "limerick about tea"),
      user_record("e-2", "impossible request"),
      user_record("e-3", "toast with context"),
  };
  MockBackend backend;  // FIFO, one decomposition per record in order
  backend.enqueue_all({
      "Compose a limerick about tea.\nTranslated Context: None\nTranslated Constraints:\n"
      "1. Use five lines.",
      "I cannot help with that request.",
      "Write a toast.\nTranslated Context: The wedding of two sailors.\n"
      "Translated Constraints:\n1. Keep it short.\n2. Mention the sea.",
  });
  const ExportDatasetResult result =
      export_dataset(records, backend, prompts(), out_path, review_path);
  EXPECT_EQ(result.written, 2);
  EXPECT_EQ(result.flagged, 1);

  std::ifstream in(out_path);
  std::string line;
  std::vector<json> rows;
  while (std::getline(in, line)) rows.push_back(json::parse(line));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["id"], "e-1");
  EXPECT_EQ(rows[0]["task"], "Compose a limerick about tea.");
  EXPECT_EQ(rows[0]["constraints"].size(), 1u);
  EXPECT_FALSE(rows[0].contains("context"));  // empty context stays out
  EXPECT_EQ(rows[1]["id"], "e-3");
  EXPECT_EQ(rows[1]["context"], "The wedding of two sailors.");
  EXPECT_EQ(rows[1]["constraints"].size(), 2u);

  std::ifstream rev(review_path);
  std::vector<json> flagged;
  while (std::getline(rev, line)) flagged.push_back(json::parse(line));
  ASSERT_EQ(flagged.size(), 1u);
  EXPECT_EQ(flagged[0]["id"], "e-2");
  EXPECT_EQ(flagged[0]["raw_output"], "I cannot help with that request.");

  // The exported dataset is loadable as instructions.
  const auto dataset = load_dataset(out_path, Source::custom);
  ASSERT_EQ(dataset.size(), 2u);
  ASSERT_TRUE(dataset[0].gold_constraints);
  EXPECT_EQ(dataset[0].gold_constraints->size(), 1u);
  fs::remove_all(dir);
}
