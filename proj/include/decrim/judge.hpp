#pragma once

#include <memory>
#include <string>
#include <vector>

#include "decrim/backend.hpp"
#include "decrim/core.hpp"
#include "decrim/prompts.hpp"

namespace decrim {

struct JudgeConfig {
  JudgeStrategy strategy = JudgeStrategy::rule_based;
  std::shared_ptr<TextBackend> backend;  // required for model strategies
  const PromptRegistry* prompts = nullptr;  // required for model strategies
  Decision unparseable_default = Decision::not_followed;
  DecodingParams decoding;  // greedy default
  int max_output_tokens = 512;

  void validate() const;
};

// One verdict per constraint, in order. icl_inst issues a single backend call
// covering all constraints; icl_const / icl_const_cot issue one call per
// constraint; rule_based evaluates RuleSpecs locally and throws
// "not rule-checkable" when a constraint lacks one.
std::vector<ConstraintVerdict> critique(const Instruction& instruction,
                                        const std::vector<Constraint>& constraints,
                                        const std::string& response, const JudgeConfig& cfg);

Decision rule_check(const RuleSpec& rule, const std::string& response);

Feedback build_feedback(const std::vector<Constraint>& constraints,
                        const std::vector<ConstraintVerdict>& verdicts);

// "{0: first constraint, 1: second constraint}" — the instruction-wise prompt's
// constraint slot format.
std::string format_constraint_dict(const std::vector<Constraint>& constraints);

// Whitespace tokenization; maximal non-whitespace runs.
long count_words(const std::string& text);

}  // namespace decrim
