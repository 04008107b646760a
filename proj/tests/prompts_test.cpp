#include "decrim/prompts.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "decrim/backend.hpp"
#include "decrim/core.hpp"

namespace fs = std::filesystem;
using decrim::Decision;
using decrim::ParseStatus;
using decrim::PromptRegistry;
using nlohmann::json;

namespace {

std::string repo_path(const std::string& rel) {
  return std::string(DECRIM_REPO_DIR) + "/" + rel;
}

json load_corpus() {
  std::ifstream in(repo_path("tests/fixtures/parser_corpus.json"));
  if (!in) throw std::runtime_error("cannot open parser corpus fixture");
  json j;
  in >> j;
  return j;
}

Decision default_of(const json& c) {
  if (c.contains("unparseable_default")) {
    return decrim::decision_from_string(c["unparseable_default"].get<std::string>());
  }
  return Decision::not_followed;
}

// Compares one parsed verdict against its expected record; returns a failure
// description, or empty on match.
std::string check_verdict(const decrim::ConstraintVerdict& got, const json& want,
                          int expected_index) {
  std::string err;
  if (got.constraint_index != expected_index) {
    err += " constraint_index=" + std::to_string(got.constraint_index) + " want " +
           std::to_string(expected_index);
  }
  if (decrim::to_string(got.decision) != want["decision"].get<std::string>()) {
    err += " decision=" + decrim::to_string(got.decision) + " want " +
           want["decision"].get<std::string>();
  }
  if (decrim::to_string(got.parse_status) != want["parse_status"].get<std::string>()) {
    err += " parse_status=" + decrim::to_string(got.parse_status) + " want " +
           want["parse_status"].get<std::string>();
  }
  const bool want_reasoning = !want["reasoning"].is_null();
  if (got.reasoning.has_value() != want_reasoning) {
    err += std::string(" reasoning ") + (got.reasoning ? "set" : "unset") + " want " +
           (want_reasoning ? "set" : "unset");
  } else if (want_reasoning && *got.reasoning != want["reasoning"].get<std::string>()) {
    err += " reasoning=\"" + *got.reasoning + "\" want \"" +
           want["reasoning"].get<std::string>() + "\"";
  }
  return err;
}

std::string run_case(const json& c) {
  const std::string parser = c["parser"].get<std::string>();
  const std::string input = c["input"].get<std::string>();
  const bool expect_throw = c.value("throws", false);

  try {
    if (parser == "verdict_single") {
      const auto got = decrim::parse_verdict_single(input, default_of(c));
      if (expect_throw) return "expected a throw";
      return check_verdict(got, c["expected"], 0);
    }
    if (parser == "verdict_multi") {
      const auto got = decrim::parse_verdict_multi(input, c["n_constraints"].get<int>(),
                                                   default_of(c));
      if (expect_throw) return "expected a throw";
      const auto& want = c["expected"];
      if (got.size() != want.size()) {
        return " got " + std::to_string(got.size()) + " verdicts, want " +
               std::to_string(want.size());
      }
      std::string err;
      for (size_t i = 0; i < got.size(); ++i) {
        err += check_verdict(got[i], want[i], static_cast<int>(i));
      }
      return err;
    }
    if (parser == "enumerated_list") {
      const auto got = decrim::parse_enumerated_list(input);
      if (expect_throw) return "expected a throw";
      const auto want = c["expected"].get<std::vector<std::string>>();
      if (got != want) {
        return " got " + json(got).dump() + " want " + json(want).dump();
      }
      return "";
    }
    if (parser == "three_part") {
      const auto got = decrim::parse_three_part(input);
      if (expect_throw) return "expected a throw";
      const auto& want = c["expected"];
      std::string err;
      if (got.task != want["task"].get<std::string>()) {
        err += " task=" + json(got.task).dump() + " want " + want["task"].dump();
      }
      if (got.context != want["context"].get<std::string>()) {
        err += " context=" + json(got.context).dump() + " want " + want["context"].dump();
      }
      const auto want_cons = want["constraints"].get<std::vector<std::string>>();
      if (got.constraints != want_cons) {
        err += " constraints=" + json(got.constraints).dump() + " want " +
               json(want_cons).dump();
      }
      return err;
    }
    return "unknown parser kind \"" + parser + "\"";
  } catch (const std::exception& e) {
    if (expect_throw) return "";
    return std::string(" threw: ") + e.what();
  }
}

}  // namespace

TEST(ParserCorpus, HasAtLeastFiftyCases) {
  const json corpus = load_corpus();
  ASSERT_GE(corpus["cases"].size(), 50u);
}

TEST(ParserCorpus, EveryCaseMatches) {
  const json corpus = load_corpus();
  int failed = 0;
  for (const auto& c : corpus["cases"]) {
    const std::string err = run_case(c);
    if (!err.empty()) {
      ++failed;
      ADD_FAILURE() << c["name"].get<std::string>() << ":" << err;
    }
  }
  EXPECT_EQ(failed, 0) << failed << " of " << corpus["cases"].size() << " corpus cases failed";
}

TEST(ParserCorpus, CoversEveryParserKind) {
  const json corpus = load_corpus();
  std::map<std::string, int> by_parser;
  for (const auto& c : corpus["cases"]) ++by_parser[c["parser"].get<std::string>()];
  EXPECT_GT(by_parser["verdict_single"], 0);
  EXPECT_GT(by_parser["verdict_multi"], 0);
  EXPECT_GT(by_parser["enumerated_list"], 0);
  EXPECT_GT(by_parser["three_part"], 0);
}

TEST(VerdictMarkers, NeitherMarkerContainsTheOther) {
  const std::string followed = "Constraint followed";
  const std::string not_followed = "Constraint not followed";
  EXPECT_EQ(not_followed.find(followed), std::string::npos);
  EXPECT_EQ(followed.find(not_followed), std::string::npos);
}

TEST(ParseVerdictMulti, RejectsNegativeCount) {
  EXPECT_THROW(decrim::parse_verdict_multi("x", -1, Decision::not_followed),
               std::invalid_argument);
}

TEST(PromptRegistry, LoadsThePinnedTemplateSet) {
  const PromptRegistry reg = PromptRegistry::load_dir(repo_path("prompts"));
  for (const char* name :
       {"conventional", "make_sure", "refine", "self_critique", "decompose_constraints_only",
        "decompose_three_part", "dtg", "dtg_respond", "judge_icl_inst", "judge_icl_const",
        "judge_icl_const_cot", "oqa_pairwise", "classify_code", "classify_constrained"}) {
    EXPECT_TRUE(reg.has(name)) << name;
  }
}

TEST(PromptRegistry, JudgeTemplatesDeclareTheirPlaceholders) {
  const PromptRegistry reg = PromptRegistry::load_dir(repo_path("prompts"));
  for (const char* name : {"judge_icl_inst", "judge_icl_const", "judge_icl_const_cot"}) {
    const auto& t = reg.get(name);
    const std::vector<std::string> want = {"instruction", "generated_response",
                                           "constraint_dict"};
    for (const auto& p : want) {
      EXPECT_NE(std::find(t.placeholders.begin(), t.placeholders.end(), p),
                t.placeholders.end())
          << name << " lacks ${" << p << "}";
    }
  }
}

TEST(PromptRegistry, RejectsATamperedTemplate) {
  const fs::path dir = fs::temp_directory_path() / "decrim_prompts_tamper";
  fs::remove_all(dir);
  fs::copy(repo_path("prompts"), dir);
  {
    std::ofstream out(dir / "make_sure.txt", std::ios::app);
    out << "\nextra line\n";
  }
  try {
    PromptRegistry::load_dir(dir.string());
    FAIL() << "expected a hash mismatch";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("make_sure"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(PromptRegistry, RejectsAMissingManifest) {
  const fs::path dir = fs::temp_directory_path() / "decrim_prompts_nomanifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "only.txt");
    out << "hello ${name}";
  }
  EXPECT_THROW(PromptRegistry::load_dir(dir.string()), std::exception);
  fs::remove_all(dir);
}

TEST(PromptRegistry, RenderBindsPlaceholders) {
  const PromptRegistry reg = PromptRegistry::load_dir(repo_path("prompts"));
  const std::string out = reg.render("refine", {{"instruction", "I"},
                                                {"previous_response", "P"},
                                                {"feedback", "F"}});
  EXPECT_NE(out.find("I"), std::string::npos);
  EXPECT_EQ(out.find("${instruction}"), std::string::npos);
  EXPECT_EQ(out.find("${previous_response}"), std::string::npos);
  EXPECT_EQ(out.find("${feedback}"), std::string::npos);
}

TEST(PromptRegistry, RenderRejectsUnboundPlaceholderByName) {
  try {
    PromptRegistry::render_body("hello ${instruction}", {});
    FAIL() << "expected unbound placeholder error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("instruction"), std::string::npos) << e.what();
  }
}

TEST(PromptRegistry, RenderInsertsValuesRaw) {
  const std::string out =
      PromptRegistry::render_body("a ${x} b", {{"x", "${y} literal"}});
  EXPECT_EQ(out, "a ${y} literal b");
}

TEST(PromptRegistry, RenderLeavesInvalidPlaceholderSyntaxAlone) {
  const std::string out = PromptRegistry::render_body("cost is ${ 5 } and ${x}", {{"x", "v"}});
  EXPECT_EQ(out, "cost is ${ 5 } and v");
}

TEST(PromptRegistry, ExtractPlaceholdersDedupesInOrder) {
  const auto got = PromptRegistry::extract_placeholders("${b} ${a} ${b} ${c1_x}");
  EXPECT_EQ(got, (std::vector<std::string>{"b", "a", "c1_x"}));
}

TEST(PromptRegistry, GetUnknownTemplateThrows) {
  const PromptRegistry reg = PromptRegistry::load_dir(repo_path("prompts"));
  EXPECT_THROW(reg.get("no_such_template"), std::exception);
}
