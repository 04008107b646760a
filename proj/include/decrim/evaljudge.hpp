#pragma once

#include <optional>
#include <string>
#include <vector>

#include "decrim/backend.hpp"
#include "decrim/judge.hpp"
#include "decrim/metrics.hpp"

namespace decrim {

struct JudgeSample {
  std::string instruction_id;
  std::string instruction;  // raw text, needed to render judge prompts
  int constraint_index = 0;
  std::string constraint;
  std::optional<RuleSpec> rule;
  std::string response;
  Label gold = Label::satisfied;
  std::optional<std::vector<Label>> annotator_labels;  // >= 2 raters when present

  void validate() const;
};

std::vector<JudgeSample> load_judge_samples(const std::string& path);

struct JudgeReliabilityReport {
  double macro_f1 = 0.0;
  double f1_negative = 0.0;
  double f1_positive = 0.0;
  std::optional<double> kappa_vs_majority;
  std::optional<double> cost_usd;
  std::optional<double> wall_time_sec;
  long samples = 0;
  long failures = 0;
  long unparseable = 0;

  json to_json() const;
};

enum class BaselineKind { all_satisfied, all_not_satisfied, majority_vote };

std::string to_string(BaselineKind v);
BaselineKind baseline_kind_from_string(const std::string& s);

// Constant predictions for the extreme baselines; per-sample majority vote
// otherwise. Even-rater ties resolve via tie_rule; tie with no rule -> error.
std::vector<Label> baseline_predict(BaselineKind kind, const std::vector<JudgeSample>& samples,
                                    std::optional<Label> tie_rule = Label::satisfied);

// Runs the judge per sample, scores predictions against gold, and reports
// kappa vs the annotator majority when annotator labels are present. Backend
// failures are counted and their samples excluded from the metric vectors.
JudgeReliabilityReport evaluate_judge(const std::vector<JudgeSample>& samples,
                                      const JudgeConfig& judge,
                                      const PriceTable* prices = nullptr,
                                      std::optional<Label> tie_rule = Label::satisfied);

// Backend-free scoring of a constant/majority baseline.
JudgeReliabilityReport evaluate_baseline(BaselineKind kind,
                                         const std::vector<JudgeSample>& samples,
                                         std::optional<Label> tie_rule = Label::satisfied);

struct WeakSupervisionRecord {
  std::string instruction;
  std::string constraint;
  std::string response;
  std::optional<std::string> reasoning;
  Decision decision = Decision::followed;
};

struct ExportStats {
  long written = 0;
  long skipped = 0;  // records lacking a reasoning trail
};

// One JSONL row {instruction, constraint, response, reasoning, decision} per
// record; records without reasoning are skipped and counted.
ExportStats export_weak_supervision(const std::vector<WeakSupervisionRecord>& records,
                                    const std::string& out_path);

// Builds exportable records from a judged response: one per constraint, with
// the verdict's reasoning trail.
std::vector<WeakSupervisionRecord> collect_weak_supervision(
    const Instruction& instruction, const std::vector<Constraint>& constraints,
    const std::string& response, const std::vector<ConstraintVerdict>& verdicts);

}  // namespace decrim
