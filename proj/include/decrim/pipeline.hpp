#pragma once

#include <memory>
#include <string>
#include <vector>

#include "decrim/core.hpp"
#include "decrim/judge.hpp"

namespace decrim {

// The published candidate-generation schedule: (prompt variant, decoding mode,
// temperature) for candidates 0..9, in order.
const std::vector<GnRScheduleEntry>& default_gnr_schedule();

// Thrown when a backend fails mid-run; carries whatever trace was assembled.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(const std::string& what, RunTrace partial)
      : std::runtime_error(what), partial_trace(std::move(partial)) {}
  RunTrace partial_trace;
};

// Initial response (make-sure prompt), one decomposition, then critique-refine
// cycles bounded by cfg.max_refinements. Iteration 0 is the initial response;
// every iteration is critiqued before any refinement.
RunTrace run_decrim(const Instruction& instruction, const PipelineConfig& cfg);

// Whole-response self-critique without a constraint list; the sentinel
// ("no ... issue/problem") stops the loop, anything else triggers one refine.
RunTrace run_self_refine(const Instruction& instruction, const PipelineConfig& cfg);

// One candidate per schedule entry, critic feedback reduced to pass/fail,
// first pass wins; when nothing passes the last candidate is returned with
// status budget_exhausted.
RunTrace run_generate_and_rank(const Instruction& instruction, const PipelineConfig& cfg);

enum class BaselineVariant { conventional, make_sure };
RunTrace run_baseline(const Instruction& instruction, BaselineVariant variant,
                      const PipelineConfig& cfg);

RunTrace run_strategy(const Instruction& instruction, Strategy strategy,
                      const PipelineConfig& cfg);

struct RunFailure {
  std::string instruction_id;
  std::string error;
};

struct DatasetRunResult {
  std::vector<RunTrace> traces;    // ordered by instruction id
  std::vector<RunFailure> failures;  // ordered by instruction id
};

// Bounded worker pool; per-instruction failures are isolated and reported.
// Throws only when every instruction fails.
DatasetRunResult run_dataset(const std::vector<Instruction>& instructions, Strategy strategy,
                             const PipelineConfig& cfg, int parallelism);

// Fills iteration verdicts (and working_constraints) for iterations that lack
// them, judging against the instruction's gold constraints. In-loop critic
// verdicts are kept unless overwrite is set.
void evaluate_traces(std::vector<RunTrace>& traces, const std::vector<Instruction>& instructions,
                     const JudgeConfig& judge, bool overwrite = false);

}  // namespace decrim
