#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace decrim {

using json = nlohmann::json;

class TextBackend;
class PromptRegistry;

enum class Source { realinstruct, ifeval, custom };
enum class Decision { followed, not_followed };
enum class ParseStatus { clean, recovered, unparseable_defaulted };
enum class Strategy { conventional, make_sure, self_refine, decrim, generate_and_rank };
enum class TerminalStatus { satisfied, budget_exhausted };
// Metric-space labels: satisfied <=> Decision::followed.
enum class Label { satisfied, not_satisfied };

std::string to_string(Source v);
std::string to_string(Decision v);
std::string to_string(ParseStatus v);
std::string to_string(Strategy v);
std::string to_string(TerminalStatus v);
std::string to_string(Label v);
Source source_from_string(const std::string& s);
Decision decision_from_string(const std::string& s);
ParseStatus parse_status_from_string(const std::string& s);
Strategy strategy_from_string(const std::string& s);
TerminalStatus terminal_status_from_string(const std::string& s);
Label label_from_string(const std::string& s);

inline Label decision_to_label(Decision d) {
  return d == Decision::followed ? Label::satisfied : Label::not_satisfied;
}

struct RuleSpec {
  enum class Kind {
    max_words,
    min_words,
    include_keyword,
    forbid_keyword,
    keyword_frequency,
    bullet_count,
    json_parseable,
    starts_with,
  };

  Kind kind = Kind::json_parseable;
  long limit = 0;             // max_words / min_words
  std::string keyword;        // include/forbid/frequency keyword, starts_with prefix
  long count = 0;             // keyword_frequency / bullet_count
  std::string relation = "exactly";  // exactly | at_least | at_most

  // Throws std::invalid_argument when params are incomplete for kind.
  void validate() const;
  static std::string kind_to_string(Kind k);
  static Kind kind_from_string(const std::string& s);
};

struct Constraint {
  std::string text;
  std::optional<std::string> category;
  std::optional<RuleSpec> rule;
};

struct Instruction {
  std::string id;
  std::string raw_text;
  std::optional<std::string> gold_task_context;
  std::optional<std::vector<Constraint>> gold_constraints;
  Source source = Source::custom;

  void validate() const;
};

struct ConstraintVerdict {
  int constraint_index = 0;
  Decision decision = Decision::not_followed;
  std::optional<std::string> reasoning;
  ParseStatus parse_status = ParseStatus::clean;
};

struct Feedback {
  // (constraint_index, constraint_text) for every constraint judged not_followed.
  std::vector<std::pair<int, std::string>> unmet;
  bool all_satisfied = false;
};

struct DecodingParams {
  enum class Mode { greedy, sampling };
  Mode mode = Mode::greedy;
  double temperature = 1.0;  // used only when sampling
  std::optional<long> seed;
};

struct TokenUsage {
  long input_tokens = 0;
  long output_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& o) {
    input_tokens += o.input_tokens;
    output_tokens += o.output_tokens;
    return *this;
  }
};

struct IterationRecord {
  std::string response;
  std::vector<ConstraintVerdict> verdicts;  // empty when the iteration was not constraint-judged
  std::optional<Feedback> feedback;
  std::optional<std::string> critique;  // self_refine free-text critique
  DecodingParams decoding;
  std::optional<std::string> prompt_variant;  // generate_and_rank: "make_sure" | "dtg"
  TokenUsage usage;
  long wall_time_ms = 0;  // sum of backend-reported latencies for this iteration's calls
};

struct RunTrace {
  std::string instruction_id;
  Strategy strategy = Strategy::conventional;
  std::vector<IterationRecord> iterations;
  int final_index = 0;
  TerminalStatus terminal_status = TerminalStatus::satisfied;
  // Constraints the critic checked: the decomposition output, or gold constraints
  // under the oracle decomposer. Empty for strategies without a constraint critic.
  std::vector<Constraint> working_constraints;
  std::optional<std::string> decompose_output;
  TokenUsage decompose_usage;

  int refinement_count() const { return static_cast<int>(iterations.size()) - 1; }
  bool revised() const { return final_index != 0; }
  void validate() const;
};

enum class DecomposerKind { self, oracle };
enum class CriticKind { self, supervised_backend, rule_based, oracle_backend };
enum class JudgeStrategy { icl_inst, icl_const, icl_const_cot, rule_based };

std::string to_string(JudgeStrategy v);
JudgeStrategy judge_strategy_from_string(const std::string& s);

struct GnRScheduleEntry {
  std::string prompt_variant;  // "make_sure" | "dtg"
  DecodingParams::Mode mode = DecodingParams::Mode::sampling;
  double temperature = 1.0;
};

struct PipelineConfig {
  int max_refinements = 10;
  DecomposerKind decomposer = DecomposerKind::self;
  CriticKind critic = CriticKind::self;
  JudgeStrategy critic_strategy = JudgeStrategy::icl_const_cot;
  DecodingParams decoding;  // initial/refine generations; greedy default
  int max_output_tokens = 1024;
  std::shared_ptr<TextBackend> generator;
  std::shared_ptr<TextBackend> decomposer_backend;  // defaults to generator
  std::shared_ptr<TextBackend> critic_backend;      // defaults to generator
  const PromptRegistry* prompts = nullptr;
  std::vector<GnRScheduleEntry> gnr_schedule;  // empty -> default_gnr_schedule()

  void validate(const Instruction& instruction) const;
};

// True iff every verdict decision is followed. Throws on an empty list.
bool instruction_satisfied(const std::vector<ConstraintVerdict>& verdicts);

// One JSON object per line. Throws with the offending line number on malformed
// input, and on duplicate ids. IFEval records map prompt -> raw_text and
// recognized rule kwargs -> RuleSpec; unrecognized rule kinds load with
// rule absent (judgeable only by model critics).
std::vector<Instruction> load_dataset(const std::string& path, Source format);

json instruction_to_json(const Instruction& v);
Instruction instruction_from_json(const json& j);
json constraint_to_json(const Constraint& v);
Constraint constraint_from_json(const json& j);
json rule_spec_to_json(const RuleSpec& v);
RuleSpec rule_spec_from_json(const json& j);
json verdict_to_json(const ConstraintVerdict& v);
ConstraintVerdict verdict_from_json(const json& j);
json feedback_to_json(const Feedback& v);
Feedback feedback_from_json(const json& j);
json decoding_to_json(const DecodingParams& v);
DecodingParams decoding_from_json(const json& j);
json trace_to_json(const RunTrace& v);
RunTrace trace_from_json(const json& j);

void save_traces(const std::vector<RunTrace>& traces, const std::string& path);
std::vector<RunTrace> load_traces(const std::string& path);

// Atomic file write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace decrim
