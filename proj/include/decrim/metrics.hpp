#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "decrim/core.hpp"

namespace decrim {

struct F1Result {
  double macro_f1 = 0.0;
  double f1_negative = 0.0;  // not_satisfied class
  double f1_positive = 0.0;  // satisfied class
};

// Per-class F1 with the 0/0 -> 0 convention; macro = unweighted mean of the
// two class F1s.
F1Result macro_f1(const std::vector<Label>& preds, const std::vector<Label>& gold);

// kappa = (p_o - p_e) / (1 - p_e), p_e from marginal products. Degenerate
// identical-constant raters (p_e = 1, p_o = 1) -> 1.0.
double cohens_kappa(const std::vector<Label>& a, const std::vector<Label>& b);

// Nominal-data alpha via the coincidence matrix with the n-1 small-sample
// correction in expected disagreement. annotations[rater][unit]; units with
// fewer than two ratings are excluded; throws when none remain.
double krippendorff_alpha(const std::vector<std::vector<std::optional<Label>>>& annotations);

struct EvalReport {
  double instruction_accuracy = 0.0;
  double constraint_accuracy = 0.0;
  std::optional<std::map<std::string, double>> per_category;
  long instructions = 0;
  long constraints = 0;
  long satisfied_instructions = 0;
  long followed_constraints = 0;

  json to_json() const;
};

// The response index a trace would have produced under refinement budget at_n:
// first passing candidate for generate_and_rank (first-pass-wins), the
// truncation point otherwise.
int truncated_final_index(const RunTrace& trace, std::optional<int> at_n);

// Instruction accuracy = fraction of traces whose selected response has every
// verdict followed; constraint accuracy = micro fraction of followed verdicts.
// Throws listing instruction ids whose selected iteration has no verdicts.
EvalReport accuracy_report(const std::vector<RunTrace>& traces, std::optional<int> at_n = {});

// "44.9" — one-decimal percentage string for report parity.
std::string format_pct(double fraction);

}  // namespace decrim
