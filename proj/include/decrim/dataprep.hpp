#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "decrim/backend.hpp"
#include "decrim/core.hpp"
#include "decrim/prompts.hpp"

namespace decrim {

struct ConvTurn {
  std::string role;  // "user" | "assistant" | "system"
  std::string content;
};

struct ConvRecord {
  std::string id;
  std::vector<ConvTurn> turns;

  std::string user_text() const;       // user turns joined with newlines
  std::string dialog_rendering() const;  // "Human: ..." lines, one per user turn
};

std::vector<ConvRecord> load_conversations(const std::string& path);
json conv_record_to_json(const ConvRecord& r);
ConvRecord conv_record_from_json(const json& j);

enum class StageKind {
  strip_assistant,
  language_filter,
  code_filter,
  first_turn_only,
  constraint_filter,
  review_export,
};

std::string to_string(StageKind v);
StageKind stage_kind_from_string(const std::string& s);
// The published six-step order: strip assistant turns, language filter, code
// filter, first user turn only, constraint filter, review export.
std::vector<StageKind> default_stage_order();

class LanguageDetector {
 public:
  virtual ~LanguageDetector() = default;
  virtual bool is_target_language(const std::string& text) const = 0;
};

// Trivial built-in heuristic: fraction of ASCII bytes must reach the
// threshold. Stands in for a real detector behind the same interface.
class AsciiRatioDetector : public LanguageDetector {
 public:
  explicit AsciiRatioDetector(double threshold = 0.8) : threshold_(threshold) {}
  bool is_target_language(const std::string& text) const override;

 private:
  double threshold_;
};

struct StageDeps {
  std::shared_ptr<TextBackend> classifier;  // code_filter / constraint_filter
  const PromptRegistry* prompts = nullptr;
  std::shared_ptr<LanguageDetector> language;  // language_filter; default AsciiRatioDetector
  std::string review_path;  // review_export target; empty = no file written
};

struct StageOutcome {
  std::vector<ConvRecord> kept;
  std::vector<ConvRecord> dropped;
  std::vector<ConvRecord> flagged;  // classifier drift after one retry
  std::vector<ConvRecord> retry;    // classifier backend failures; stage resumable
};

// Every input record lands in exactly one outcome bucket.
StageOutcome filter_stage(const std::vector<ConvRecord>& records, StageKind stage,
                          const StageDeps& deps);

enum class YesNo { yes, no, drift };
// Case-insensitive leading Yes/No match after trimming whitespace/quotes.
YesNo parse_yes_no(const std::string& text);

struct Decomposed {
  std::string task;
  std::string context;
  std::vector<std::string> constraints;
  bool flagged = false;  // parse failure -> manual review
  std::string raw_output;
};

// Renders the three-part decomposition prompt, calls the backend, and parses
// the output. The prompt ends with the task header, so a missing leading
// header is re-attached before parsing. Parse failure flags the record
// instead of dropping it.
Decomposed decompose_instruction(const ConvRecord& record, TextBackend& backend,
                                 const PromptRegistry& prompts);

struct StageStats {
  std::string stage;
  long input = 0;
  long kept = 0;
  long dropped = 0;
  long flagged = 0;
  long retry = 0;

  double retention() const { return input == 0 ? 0.0 : static_cast<double>(kept) / input; }
  json to_json() const;
};

struct DataprepConfig {
  std::vector<StageKind> stages;  // empty -> default_stage_order()
  std::string checkpoint_dir;    // empty = no checkpoints
  StageDeps deps;
};

struct DataprepResult {
  std::vector<ConvRecord> survivors;
  std::vector<StageStats> stats;
  std::optional<std::string> incomplete_stage;  // set when a retry queue remains
};

// Runs the staged filter with per-stage checkpoints (atomic write-temp-then-
// rename). A rerun over the same checkpoint directory skips completed stages.
DataprepResult run_dataprep(const std::vector<ConvRecord>& input, const DataprepConfig& cfg);

std::vector<StageStats> pipeline_stats(const std::string& checkpoint_dir);

// Decomposes every survivor and writes the loadable dataset (id, instruction,
// task, constraints[]); flagged records go to review_path when set.
struct ExportDatasetResult {
  long written = 0;
  long flagged = 0;
};
ExportDatasetResult export_dataset(const std::vector<ConvRecord>& records, TextBackend& backend,
                                   const PromptRegistry& prompts, const std::string& out_path,
                                   const std::string& review_path = "");

}  // namespace decrim
