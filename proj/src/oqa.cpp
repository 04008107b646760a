#include "decrim/oqa.hpp"

namespace decrim {

std::string to_string(PairwiseOutcome v) {
  switch (v) {
    case PairwiseOutcome::win_a: return "win_a";
    case PairwiseOutcome::win_b: return "win_b";
    case PairwiseOutcome::tie: return "tie";
  }
  return "tie";
}

namespace {

// Last-occurring [[A]]/[[B]]/[[C]] token wins; nullopt when none appears.
std::optional<PairwiseOutcome> extract_verdict(const std::string& reply) {
  const size_t a = reply.rfind("[[A]]");
  const size_t b = reply.rfind("[[B]]");
  const size_t c = reply.rfind("[[C]]");
  size_t best = std::string::npos;
  std::optional<PairwiseOutcome> out;
  if (a != std::string::npos) {
    best = a;
    out = PairwiseOutcome::win_a;
  }
  if (b != std::string::npos && (best == std::string::npos || b > best)) {
    best = b;
    out = PairwiseOutcome::win_b;
  }
  if (c != std::string::npos && (best == std::string::npos || c > best)) {
    out = PairwiseOutcome::tie;
  }
  return out;
}

std::string judge_once(const std::string& instruction, const std::string& first,
                       const std::string& second, TextBackend& backend,
                       const PromptRegistry& prompts, int max_output_tokens,
                       std::string& prompt_out) {
  prompt_out = prompts.render("oqa_pairwise", {{"user_instruction", instruction},
                                               {"answer_a", first},
                                               {"answer_b", second}});
  DecodingParams greedy;
  GenerationRequest req = make_request(backend, prompt_out, greedy, max_output_tokens);
  return backend.generate(req).text;
}

}  // namespace

PairwiseOutcome pairwise_rank(const std::string& instruction, const std::string& resp_a,
                              const std::string& resp_b, TextBackend& backend,
                              const PromptRegistry& prompts, PairwiseTranscript* transcript,
                              int max_output_tokens) {
  PairwiseTranscript local;
  local.run1_reply = judge_once(instruction, resp_a, resp_b, backend, prompts,
                                max_output_tokens, local.run1_prompt);
  const std::optional<PairwiseOutcome> v1 = extract_verdict(local.run1_reply);
  if (!v1) {
    if (transcript) *transcript = local;
    throw std::runtime_error("pairwise judge reply has no [[A]]/[[B]]/[[C]] verdict.\n"
                             "Run 1 reply:\n" + local.run1_reply + "\nRun 2: (not reached)");
  }
  local.run2_reply = judge_once(instruction, resp_b, resp_a, backend, prompts,
                                max_output_tokens, local.run2_prompt);
  const std::optional<PairwiseOutcome> v2_raw = extract_verdict(local.run2_reply);
  if (!v2_raw) {
    if (transcript) *transcript = local;
    throw std::runtime_error("pairwise judge reply has no [[A]]/[[B]]/[[C]] verdict.\n"
                             "Run 1 reply:\n" + local.run1_reply + "\nRun 2 reply:\n" +
                             local.run2_reply);
  }
  // Run 2 saw the responses swapped; map its verdict back to the original order.
  PairwiseOutcome v2 = *v2_raw;
  if (v2 == PairwiseOutcome::win_a) v2 = PairwiseOutcome::win_b;
  else if (v2 == PairwiseOutcome::win_b) v2 = PairwiseOutcome::win_a;

  PairwiseOutcome outcome;
  if (*v1 == v2 && *v1 != PairwiseOutcome::tie) {
    outcome = *v1;
  } else {
    outcome = PairwiseOutcome::tie;  // explicit tie or position-dependent switch
  }
  local.outcome = outcome;
  if (transcript) *transcript = local;
  return outcome;
}

OqaReport oqa_report(const std::vector<RunTrace>& traces,
                     const std::map<std::string, std::string>& instruction_text_by_id,
                     TextBackend& backend, const PromptRegistry& prompts) {
  OqaReport rep;
  rep.total = static_cast<long>(traces.size());
  long win = 0, lose = 0, tie = 0;
  for (const auto& trace : traces) {
    if (!trace.revised()) continue;
    const auto it = instruction_text_by_id.find(trace.instruction_id);
    if (it == instruction_text_by_id.end()) {
      throw std::invalid_argument("no instruction text for trace \"" + trace.instruction_id +
                                  "\"");
    }
    OqaPair pair;
    pair.instruction_id = trace.instruction_id;
    pair.outcome = pairwise_rank(it->second, trace.iterations.front().response,
                                 trace.iterations[trace.final_index].response, backend, prompts,
                                 &pair.transcript);
    switch (pair.outcome) {
      case PairwiseOutcome::win_b: ++win; break;   // revision preferred
      case PairwiseOutcome::win_a: ++lose; break;  // initial preferred
      case PairwiseOutcome::tie: ++tie; break;
    }
    rep.pairs.push_back(std::move(pair));
  }
  rep.revised = win + lose + tie;
  if (rep.revised == 0) {
    rep.empty_denominator = true;
    return rep;
  }
  rep.win_pct = 100.0 * win / rep.revised;
  rep.lose_pct = 100.0 * lose / rep.revised;
  rep.tie_pct = 100.0 * tie / rep.revised;
  return rep;
}

json OqaReport::to_json() const {
  json pairs_json = json::array();
  for (const auto& p : pairs) {
    pairs_json.push_back(json{{"instruction_id", p.instruction_id},
                              {"outcome", to_string(p.outcome)},
                              {"run1_prompt", p.transcript.run1_prompt},
                              {"run1_reply", p.transcript.run1_reply},
                              {"run2_prompt", p.transcript.run2_prompt},
                              {"run2_reply", p.transcript.run2_reply}});
  }
  return json{{"win_pct", win_pct},
              {"lose_pct", lose_pct},
              {"tie_pct", tie_pct},
              {"revised", revised},
              {"total", total},
              {"empty_denominator", empty_denominator},
              {"pairs", pairs_json}};
}

}  // namespace decrim
