#include "decrim/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <regex>
#include <thread>

#include "decrim/prompts.hpp"

namespace decrim {

namespace {

const std::regex& sentinel_regex() {
  static const std::regex re(R"(\bno(\s+\w+){0,2}\s+(issues?|problems?)\b)",
                             std::regex::ECMAScript | std::regex::icase);
  return re;
}

std::shared_ptr<TextBackend> critic_backend_of(const PipelineConfig& cfg) {
  if (cfg.critic == CriticKind::self || !cfg.critic_backend) return cfg.generator;
  return cfg.critic_backend;
}

std::shared_ptr<TextBackend> decomposer_backend_of(const PipelineConfig& cfg) {
  return cfg.decomposer_backend ? cfg.decomposer_backend : cfg.generator;
}

JudgeConfig make_critic_config(const PipelineConfig& cfg) {
  JudgeConfig jc;
  jc.strategy = cfg.critic == CriticKind::rule_based ? JudgeStrategy::rule_based
                                                     : cfg.critic_strategy;
  jc.backend = critic_backend_of(cfg);
  jc.prompts = cfg.prompts;
  return jc;
}

IterationRecord generate_iteration(TextBackend& backend, const std::string& prompt,
                                   const DecodingParams& decoding, int max_output_tokens) {
  GenerationRequest req = make_request(backend, prompt, decoding, max_output_tokens);
  const GenerationResult res = backend.generate(req);
  IterationRecord it;
  it.response = res.text;
  it.decoding = decoding;
  it.usage.input_tokens = res.input_tokens;
  it.usage.output_tokens = res.output_tokens;
  it.wall_time_ms = res.latency_ms;
  return it;
}

// Decomposes once; fills working_constraints, decompose_output and
// decompose_usage on the trace.
void decompose_into(RunTrace& trace, const Instruction& instruction,
                    const PipelineConfig& cfg) {
  if (cfg.decomposer == DecomposerKind::oracle) {
    trace.working_constraints = *instruction.gold_constraints;
    return;
  }
  auto backend = decomposer_backend_of(cfg);
  const std::string prompt =
      cfg.prompts->render("decompose_constraints_only", {{"instruction", instruction.raw_text}});
  DecodingParams greedy;  // decomposition is deterministic by construction
  GenerationRequest req = make_request(*backend, prompt, greedy, cfg.max_output_tokens);
  const GenerationResult res = backend->generate(req);
  trace.decompose_output = res.text;
  trace.decompose_usage.input_tokens = res.input_tokens;
  trace.decompose_usage.output_tokens = res.output_tokens;
  for (auto& text : parse_enumerated_list(res.text)) {
    Constraint c;
    c.text = std::move(text);
    trace.working_constraints.push_back(std::move(c));
  }
}

std::string format_feedback_text(const Feedback& fb) {
  std::string out = "The response does not follow these constraints:";
  int n = 0;
  for (const auto& [_, text] : fb.unmet) {
    out += "\n" + std::to_string(++n) + ". " + text;
  }
  return out;
}

[[noreturn]] void rethrow_with_trace(const std::exception& e, RunTrace trace) {
  throw PipelineError(e.what(), std::move(trace));
}

}  // namespace

const std::vector<GnRScheduleEntry>& default_gnr_schedule() {
  using Mode = DecodingParams::Mode;
  static const std::vector<GnRScheduleEntry> schedule = {
      {"make_sure", Mode::sampling, 0.2}, {"dtg", Mode::sampling, 0.2},
      {"make_sure", Mode::greedy, 1.0},   {"dtg", Mode::greedy, 1.0},
      {"make_sure", Mode::sampling, 1.0}, {"dtg", Mode::sampling, 1.0},
      {"make_sure", Mode::sampling, 0.5}, {"dtg", Mode::sampling, 0.5},
      {"make_sure", Mode::sampling, 0.7}, {"dtg", Mode::sampling, 0.7},
  };
  return schedule;
}

RunTrace run_decrim(const Instruction& instruction, const PipelineConfig& cfg) {
  instruction.validate();
  cfg.validate(instruction);
  RunTrace trace;
  trace.instruction_id = instruction.id;
  trace.strategy = Strategy::decrim;
  trace.terminal_status = TerminalStatus::budget_exhausted;
  try {
    const std::string initial_prompt =
        cfg.prompts->render("make_sure", {{"instruction", instruction.raw_text}});
    trace.iterations.push_back(generate_iteration(*cfg.generator, initial_prompt, cfg.decoding,
                                                  cfg.max_output_tokens));
    decompose_into(trace, instruction, cfg);
    if (trace.working_constraints.empty()) {
      // Nothing to check: vacuously satisfied on the initial response.
      trace.iterations[0].feedback = Feedback{{}, true};
      trace.final_index = 0;
      trace.terminal_status = TerminalStatus::satisfied;
      trace.validate();
      return trace;
    }
    const JudgeConfig critic = make_critic_config(cfg);
    for (int k = 0;; ++k) {
      IterationRecord& current = trace.iterations[k];
      current.verdicts =
          critique(instruction, trace.working_constraints, current.response, critic);
      const Feedback fb = build_feedback(trace.working_constraints, current.verdicts);
      current.feedback = fb;
      if (fb.all_satisfied) {
        trace.final_index = k;
        trace.terminal_status = TerminalStatus::satisfied;
        break;
      }
      if (k == cfg.max_refinements) {
        trace.final_index = k;
        trace.terminal_status = TerminalStatus::budget_exhausted;
        break;
      }
      const std::string refine_prompt =
          cfg.prompts->render("refine", {{"instruction", instruction.raw_text},
                                         {"previous_response", current.response},
                                         {"feedback", format_feedback_text(fb)}});
      trace.iterations.push_back(generate_iteration(*cfg.generator, refine_prompt, cfg.decoding,
                                                    cfg.max_output_tokens));
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    rethrow_with_trace(e, trace);
  }
  trace.validate();
  return trace;
}

RunTrace run_self_refine(const Instruction& instruction, const PipelineConfig& cfg) {
  instruction.validate();
  cfg.validate(instruction);
  RunTrace trace;
  trace.instruction_id = instruction.id;
  trace.strategy = Strategy::self_refine;
  trace.terminal_status = TerminalStatus::budget_exhausted;
  try {
    const std::string initial_prompt =
        cfg.prompts->render("make_sure", {{"instruction", instruction.raw_text}});
    trace.iterations.push_back(generate_iteration(*cfg.generator, initial_prompt, cfg.decoding,
                                                  cfg.max_output_tokens));
    auto critic = critic_backend_of(cfg);
    for (int k = 0;; ++k) {
      IterationRecord& current = trace.iterations[k];
      const std::string critique_prompt =
          cfg.prompts->render("self_critique", {{"instruction", instruction.raw_text},
                                                {"previous_response", current.response}});
      DecodingParams greedy;
      GenerationRequest req = make_request(*critic, critique_prompt, greedy, 512);
      const GenerationResult res = critic->generate(req);
      current.critique = res.text;
      if (std::regex_search(res.text, sentinel_regex())) {
        current.feedback = Feedback{{}, true};
        trace.final_index = k;
        trace.terminal_status = TerminalStatus::satisfied;
        break;
      }
      if (k == cfg.max_refinements) {
        trace.final_index = k;
        trace.terminal_status = TerminalStatus::budget_exhausted;
        break;
      }
      const std::string refine_prompt =
          cfg.prompts->render("refine", {{"instruction", instruction.raw_text},
                                         {"previous_response", current.response},
                                         {"feedback", res.text}});
      trace.iterations.push_back(generate_iteration(*cfg.generator, refine_prompt, cfg.decoding,
                                                    cfg.max_output_tokens));
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    rethrow_with_trace(e, trace);
  }
  trace.validate();
  return trace;
}

RunTrace run_generate_and_rank(const Instruction& instruction, const PipelineConfig& cfg) {
  instruction.validate();
  cfg.validate(instruction);
  const std::vector<GnRScheduleEntry>& schedule =
      cfg.gnr_schedule.empty() ? default_gnr_schedule() : cfg.gnr_schedule;
  const int budget =
      std::min<int>(cfg.max_refinements, static_cast<int>(schedule.size()));
  if (budget < 1) {
    throw std::invalid_argument("generate_and_rank requires budget for at least one candidate");
  }
  RunTrace trace;
  trace.instruction_id = instruction.id;
  trace.strategy = Strategy::generate_and_rank;
  trace.terminal_status = TerminalStatus::budget_exhausted;
  try {
    decompose_into(trace, instruction, cfg);
    const JudgeConfig critic = make_critic_config(cfg);
    for (int i = 0; i < budget; ++i) {
      const GnRScheduleEntry& entry = schedule[i];
      DecodingParams decoding;
      decoding.mode = entry.mode;
      decoding.temperature = entry.temperature;
      decoding.seed = cfg.decoding.seed;
      IterationRecord it;
      if (entry.prompt_variant == "dtg") {
        const std::string decompose_prompt =
            cfg.prompts->render("dtg", {{"instruction", instruction.raw_text}});
        DecodingParams greedy;
        GenerationRequest dreq =
            make_request(*cfg.generator, decompose_prompt, greedy, cfg.max_output_tokens);
        const GenerationResult dres = cfg.generator->generate(dreq);
        // Second turn: the model's own constraint list stays in the history.
        GenerationRequest rreq;
        rreq.model_id = cfg.generator->model_id();
        rreq.messages = {{Role::user, decompose_prompt},
                         {Role::assistant, dres.text},
                         {Role::user, cfg.prompts->render(
                                          "dtg_respond",
                                          {{"instruction", instruction.raw_text}})}};
        rreq.decoding = decoding;
        rreq.max_output_tokens = cfg.max_output_tokens;
        const GenerationResult rres = cfg.generator->generate(rreq);
        it.response = rres.text;
        it.decoding = decoding;
        it.usage.input_tokens = dres.input_tokens + rres.input_tokens;
        it.usage.output_tokens = dres.output_tokens + rres.output_tokens;
        it.wall_time_ms = dres.latency_ms + rres.latency_ms;
      } else if (entry.prompt_variant == "make_sure") {
        const std::string prompt =
            cfg.prompts->render("make_sure", {{"instruction", instruction.raw_text}});
        it = generate_iteration(*cfg.generator, prompt, decoding, cfg.max_output_tokens);
      } else {
        throw std::invalid_argument("unknown schedule prompt variant \"" +
                                    entry.prompt_variant + "\"");
      }
      it.prompt_variant = entry.prompt_variant;
      trace.iterations.push_back(std::move(it));
      IterationRecord& current = trace.iterations.back();
      if (!trace.working_constraints.empty()) {
        current.verdicts =
            critique(instruction, trace.working_constraints, current.response, critic);
      }
      const Feedback fb = build_feedback(trace.working_constraints, current.verdicts);
      current.feedback = fb;
      if (fb.all_satisfied) {
        trace.final_index = i;
        trace.terminal_status = TerminalStatus::satisfied;
        break;
      }
      trace.final_index = i;  // nothing passed yet: the latest candidate stands
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    rethrow_with_trace(e, trace);
  }
  trace.validate();
  return trace;
}

RunTrace run_baseline(const Instruction& instruction, BaselineVariant variant,
                      const PipelineConfig& cfg) {
  instruction.validate();
  cfg.validate(instruction);
  RunTrace trace;
  trace.instruction_id = instruction.id;
  trace.strategy =
      variant == BaselineVariant::conventional ? Strategy::conventional : Strategy::make_sure;
  trace.terminal_status = TerminalStatus::budget_exhausted;
  try {
    const std::string tmpl =
        variant == BaselineVariant::conventional ? "conventional" : "make_sure";
    const std::string prompt = cfg.prompts->render(tmpl, {{"instruction", instruction.raw_text}});
    trace.iterations.push_back(generate_iteration(*cfg.generator, prompt, cfg.decoding,
                                                  cfg.max_output_tokens));
    trace.final_index = 0;
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    rethrow_with_trace(e, trace);
  }
  trace.validate();
  return trace;
}

RunTrace run_strategy(const Instruction& instruction, Strategy strategy,
                      const PipelineConfig& cfg) {
  switch (strategy) {
    case Strategy::conventional:
      return run_baseline(instruction, BaselineVariant::conventional, cfg);
    case Strategy::make_sure:
      return run_baseline(instruction, BaselineVariant::make_sure, cfg);
    case Strategy::self_refine:
      return run_self_refine(instruction, cfg);
    case Strategy::decrim:
      return run_decrim(instruction, cfg);
    case Strategy::generate_and_rank:
      return run_generate_and_rank(instruction, cfg);
  }
  throw std::invalid_argument("unknown strategy");
}

DatasetRunResult run_dataset(const std::vector<Instruction>& instructions, Strategy strategy,
                             const PipelineConfig& cfg, int parallelism) {
  if (parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");
  DatasetRunResult result;
  if (instructions.empty()) return result;

  std::vector<std::optional<RunTrace>> traces(instructions.size());
  std::vector<std::optional<RunFailure>> failures(instructions.size());
  std::atomic<size_t> next{0};
  const int workers = std::min<int>(parallelism, static_cast<int>(instructions.size()));

  auto worker = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= instructions.size()) return;
      try {
        traces[i] = run_strategy(instructions[i], strategy, cfg);
      } catch (const std::exception& e) {
        failures[i] = RunFailure{instructions[i].id, e.what()};
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (size_t i = 0; i < instructions.size(); ++i) {
    if (traces[i]) result.traces.push_back(std::move(*traces[i]));
    if (failures[i]) result.failures.push_back(std::move(*failures[i]));
  }
  std::sort(result.traces.begin(), result.traces.end(),
            [](const RunTrace& a, const RunTrace& b) { return a.instruction_id < b.instruction_id; });
  std::sort(result.failures.begin(), result.failures.end(),
            [](const RunFailure& a, const RunFailure& b) {
              return a.instruction_id < b.instruction_id;
            });
  if (result.traces.empty()) {
    throw std::runtime_error("all " + std::to_string(instructions.size()) +
                             " instructions failed; first error: " +
                             result.failures.front().error);
  }
  return result;
}

void evaluate_traces(std::vector<RunTrace>& traces, const std::vector<Instruction>& instructions,
                     const JudgeConfig& judge, bool overwrite) {
  judge.validate();
  std::map<std::string, const Instruction*> by_id;
  for (const auto& ins : instructions) by_id[ins.id] = &ins;
  for (auto& trace : traces) {
    const auto it = by_id.find(trace.instruction_id);
    if (it == by_id.end()) {
      throw std::invalid_argument("no instruction with id \"" + trace.instruction_id + "\"");
    }
    const Instruction& ins = *it->second;
    if (!ins.gold_constraints) {
      throw std::invalid_argument("instruction " + ins.id +
                                  " has no gold constraints to judge against");
    }
    if (overwrite || trace.working_constraints.empty()) {
      trace.working_constraints = *ins.gold_constraints;
    }
    for (auto& iter : trace.iterations) {
      if (!overwrite && !iter.verdicts.empty()) continue;
      iter.verdicts = critique(ins, *ins.gold_constraints, iter.response, judge);
    }
  }
}

}  // namespace decrim
