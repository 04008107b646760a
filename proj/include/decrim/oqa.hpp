#pragma once

#include <map>
#include <string>
#include <vector>

#include "decrim/backend.hpp"
#include "decrim/core.hpp"
#include "decrim/prompts.hpp"

namespace decrim {

enum class PairwiseOutcome { win_a, win_b, tie };

std::string to_string(PairwiseOutcome v);

struct PairwiseTranscript {
  std::string run1_prompt;
  std::string run1_reply;
  std::string run2_prompt;
  std::string run2_reply;
  PairwiseOutcome outcome = PairwiseOutcome::tie;
};

// Runs the pairwise judge twice, order (A,B) then (B,A); run-2 verdicts are
// mapped back through the swap. A consistent preference names the winner; a
// preference switch or any explicit tie is a tie. A missing [[A]]/[[B]]/[[C]]
// token in either run throws, with both transcripts in the message.
PairwiseOutcome pairwise_rank(const std::string& instruction, const std::string& resp_a,
                              const std::string& resp_b, TextBackend& backend,
                              const PromptRegistry& prompts,
                              PairwiseTranscript* transcript = nullptr,
                              int max_output_tokens = 512);

struct OqaPair {
  std::string instruction_id;
  PairwiseOutcome outcome = PairwiseOutcome::tie;  // win_b = revision preferred
  PairwiseTranscript transcript;
};

struct OqaReport {
  double win_pct = 0.0;   // final response preferred
  double lose_pct = 0.0;  // initial response preferred
  double tie_pct = 0.0;
  long revised = 0;
  long total = 0;
  bool empty_denominator = false;
  std::vector<OqaPair> pairs;  // per-pair transcripts kept for audit

  json to_json() const;
};

// Compares initial vs final response for traces with at least one revision;
// unrevised traces stay out of the denominator.
OqaReport oqa_report(const std::vector<RunTrace>& traces,
                     const std::map<std::string, std::string>& instruction_text_by_id,
                     TextBackend& backend, const PromptRegistry& prompts);

}  // namespace decrim
