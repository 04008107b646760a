#include "decrim/core.hpp"

#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace decrim {

namespace {

[[noreturn]] void bad_enum(const std::string& what, const std::string& value) {
  throw std::invalid_argument("unknown " + what + ": \"" + value + "\"");
}

}  // namespace

std::string to_string(Source v) {
  switch (v) {
    case Source::realinstruct: return "realinstruct";
    case Source::ifeval: return "ifeval";
    case Source::custom: return "custom";
  }
  return "custom";
}

Source source_from_string(const std::string& s) {
  if (s == "realinstruct") return Source::realinstruct;
  if (s == "ifeval") return Source::ifeval;
  if (s == "custom") return Source::custom;
  bad_enum("source", s);
}

std::string to_string(Decision v) {
  return v == Decision::followed ? "followed" : "not_followed";
}

Decision decision_from_string(const std::string& s) {
  if (s == "followed") return Decision::followed;
  if (s == "not_followed") return Decision::not_followed;
  bad_enum("decision", s);
}

std::string to_string(ParseStatus v) {
  switch (v) {
    case ParseStatus::clean: return "clean";
    case ParseStatus::recovered: return "recovered";
    case ParseStatus::unparseable_defaulted: return "unparseable_defaulted";
  }
  return "clean";
}

ParseStatus parse_status_from_string(const std::string& s) {
  if (s == "clean") return ParseStatus::clean;
  if (s == "recovered") return ParseStatus::recovered;
  if (s == "unparseable_defaulted") return ParseStatus::unparseable_defaulted;
  bad_enum("parse_status", s);
}

std::string to_string(Strategy v) {
  switch (v) {
    case Strategy::conventional: return "conventional";
    case Strategy::make_sure: return "make_sure";
    case Strategy::self_refine: return "self_refine";
    case Strategy::decrim: return "decrim";
    case Strategy::generate_and_rank: return "generate_and_rank";
  }
  return "conventional";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "conventional") return Strategy::conventional;
  if (s == "make_sure") return Strategy::make_sure;
  if (s == "self_refine") return Strategy::self_refine;
  if (s == "decrim") return Strategy::decrim;
  if (s == "generate_and_rank") return Strategy::generate_and_rank;
  bad_enum("strategy", s);
}

std::string to_string(TerminalStatus v) {
  return v == TerminalStatus::satisfied ? "satisfied" : "budget_exhausted";
}

TerminalStatus terminal_status_from_string(const std::string& s) {
  if (s == "satisfied") return TerminalStatus::satisfied;
  if (s == "budget_exhausted") return TerminalStatus::budget_exhausted;
  bad_enum("terminal_status", s);
}

std::string to_string(Label v) {
  return v == Label::satisfied ? "satisfied" : "not_satisfied";
}

Label label_from_string(const std::string& s) {
  if (s == "satisfied") return Label::satisfied;
  if (s == "not_satisfied") return Label::not_satisfied;
  bad_enum("label", s);
}

std::string to_string(JudgeStrategy v) {
  switch (v) {
    case JudgeStrategy::icl_inst: return "icl_inst";
    case JudgeStrategy::icl_const: return "icl_const";
    case JudgeStrategy::icl_const_cot: return "icl_const_cot";
    case JudgeStrategy::rule_based: return "rule_based";
  }
  return "rule_based";
}

JudgeStrategy judge_strategy_from_string(const std::string& s) {
  if (s == "icl_inst") return JudgeStrategy::icl_inst;
  if (s == "icl_const") return JudgeStrategy::icl_const;
  if (s == "icl_const_cot") return JudgeStrategy::icl_const_cot;
  if (s == "rule_based") return JudgeStrategy::rule_based;
  bad_enum("judge strategy", s);
}

std::string RuleSpec::kind_to_string(Kind k) {
  switch (k) {
    case Kind::max_words: return "max_words";
    case Kind::min_words: return "min_words";
    case Kind::include_keyword: return "include_keyword";
    case Kind::forbid_keyword: return "forbid_keyword";
    case Kind::keyword_frequency: return "keyword_frequency";
    case Kind::bullet_count: return "bullet_count";
    case Kind::json_parseable: return "json_parseable";
    case Kind::starts_with: return "starts_with";
  }
  return "json_parseable";
}

RuleSpec::Kind RuleSpec::kind_from_string(const std::string& s) {
  if (s == "max_words") return Kind::max_words;
  if (s == "min_words") return Kind::min_words;
  if (s == "include_keyword") return Kind::include_keyword;
  if (s == "forbid_keyword") return Kind::forbid_keyword;
  if (s == "keyword_frequency") return Kind::keyword_frequency;
  if (s == "bullet_count") return Kind::bullet_count;
  if (s == "json_parseable") return Kind::json_parseable;
  if (s == "starts_with") return Kind::starts_with;
  bad_enum("rule kind", s);
}

void RuleSpec::validate() const {
  auto require = [this](bool ok, const std::string& msg) {
    if (!ok) {
      throw std::invalid_argument("rule " + kind_to_string(kind) + ": " + msg);
    }
  };
  if (relation != "exactly" && relation != "at_least" && relation != "at_most") {
    throw std::invalid_argument("rule relation must be exactly|at_least|at_most, got \"" +
                                relation + "\"");
  }
  switch (kind) {
    case Kind::max_words:
    case Kind::min_words:
      require(limit > 0, "requires a positive word limit");
      break;
    case Kind::include_keyword:
    case Kind::forbid_keyword:
    case Kind::starts_with:
      require(!keyword.empty(), "requires a non-empty keyword");
      break;
    case Kind::keyword_frequency:
      require(!keyword.empty(), "requires a non-empty keyword");
      require(count >= 0, "requires a non-negative count");
      break;
    case Kind::bullet_count:
      require(count >= 0, "requires a non-negative count");
      break;
    case Kind::json_parseable:
      break;
  }
}

void Instruction::validate() const {
  if (id.empty()) throw std::invalid_argument("instruction id must be non-empty");
  if (raw_text.empty()) {
    throw std::invalid_argument("instruction " + id + ": raw_text must be non-empty");
  }
  if (gold_constraints) {
    for (const auto& c : *gold_constraints) {
      if (c.text.empty()) {
        throw std::invalid_argument("instruction " + id + ": constraint text must be non-empty");
      }
      if (c.rule) c.rule->validate();
    }
  }
  if (source == Source::ifeval && !gold_constraints) {
    throw std::invalid_argument("instruction " + id + ": ifeval records carry gold constraints");
  }
}

void RunTrace::validate() const {
  if (iterations.empty()) {
    throw std::invalid_argument("trace " + instruction_id + ": iterations must be non-empty");
  }
  if (final_index < 0 || final_index >= static_cast<int>(iterations.size())) {
    throw std::invalid_argument("trace " + instruction_id + ": final_index out of range");
  }
  if (terminal_status == TerminalStatus::satisfied) {
    const auto& fb = iterations[final_index].feedback;
    if (!fb || !fb->all_satisfied) {
      throw std::invalid_argument("trace " + instruction_id +
                                  ": satisfied status requires an all-satisfied final feedback");
    }
  }
}

void PipelineConfig::validate(const Instruction& instruction) const {
  if (max_refinements < 0) throw std::invalid_argument("max_refinements must be >= 0");
  if (!generator) throw std::invalid_argument("pipeline requires a generator backend");
  if (!prompts) throw std::invalid_argument("pipeline requires a prompt registry");
  if (decoding.mode == DecodingParams::Mode::sampling && decoding.temperature <= 0) {
    throw std::invalid_argument("sampling requires temperature > 0");
  }
  if (decomposer == DecomposerKind::oracle && !instruction.gold_constraints) {
    throw std::invalid_argument("instruction " + instruction.id +
                                ": oracle decomposer requires gold constraints");
  }
}

bool instruction_satisfied(const std::vector<ConstraintVerdict>& verdicts) {
  if (verdicts.empty()) throw std::invalid_argument("no constraints judged");
  for (const auto& v : verdicts) {
    if (v.decision != Decision::followed) return false;
  }
  return true;
}

json rule_spec_to_json(const RuleSpec& v) {
  json j{{"kind", RuleSpec::kind_to_string(v.kind)}};
  switch (v.kind) {
    case RuleSpec::Kind::max_words:
    case RuleSpec::Kind::min_words:
      j["limit"] = v.limit;
      break;
    case RuleSpec::Kind::include_keyword:
    case RuleSpec::Kind::forbid_keyword:
    case RuleSpec::Kind::starts_with:
      j["keyword"] = v.keyword;
      break;
    case RuleSpec::Kind::keyword_frequency:
      j["keyword"] = v.keyword;
      j["count"] = v.count;
      j["relation"] = v.relation;
      break;
    case RuleSpec::Kind::bullet_count:
      j["count"] = v.count;
      j["relation"] = v.relation;
      break;
    case RuleSpec::Kind::json_parseable:
      break;
  }
  return j;
}

RuleSpec rule_spec_from_json(const json& j) {
  RuleSpec r;
  r.kind = RuleSpec::kind_from_string(j.at("kind").get<std::string>());
  r.limit = j.value("limit", 0L);
  r.keyword = j.value("keyword", std::string{});
  r.count = j.value("count", 0L);
  r.relation = j.value("relation", std::string{"exactly"});
  r.validate();
  return r;
}

json constraint_to_json(const Constraint& v) {
  json j{{"text", v.text}};
  if (v.category) j["category"] = *v.category;
  if (v.rule) j["rule"] = rule_spec_to_json(*v.rule);
  return j;
}

Constraint constraint_from_json(const json& j) {
  Constraint c;
  if (j.is_string()) {
    c.text = j.get<std::string>();
    return c;
  }
  c.text = j.at("text").get<std::string>();
  if (j.contains("category") && !j["category"].is_null()) {
    c.category = j["category"].get<std::string>();
  }
  if (j.contains("rule") && !j["rule"].is_null()) {
    c.rule = rule_spec_from_json(j["rule"]);
  }
  return c;
}

json instruction_to_json(const Instruction& v) {
  json j{{"id", v.id}, {"instruction", v.raw_text}, {"source", to_string(v.source)}};
  if (v.gold_task_context) j["task"] = *v.gold_task_context;
  if (v.gold_constraints) {
    json arr = json::array();
    for (const auto& c : *v.gold_constraints) arr.push_back(constraint_to_json(c));
    j["constraints"] = arr;
  }
  return j;
}

Instruction instruction_from_json(const json& j) {
  Instruction ins;
  ins.id = j.at("id").is_string() ? j["id"].get<std::string>() : j["id"].dump();
  ins.raw_text = j.at("instruction").get<std::string>();
  if (j.contains("task") && !j["task"].is_null()) {
    ins.gold_task_context = j["task"].get<std::string>();
  }
  if (j.contains("constraints") && !j["constraints"].is_null()) {
    std::vector<Constraint> cs;
    for (const auto& cj : j["constraints"]) cs.push_back(constraint_from_json(cj));
    ins.gold_constraints = std::move(cs);
  }
  ins.source = source_from_string(j.value("source", std::string{"custom"}));
  ins.validate();
  return ins;
}

json verdict_to_json(const ConstraintVerdict& v) {
  json j{{"constraint_index", v.constraint_index},
         {"decision", to_string(v.decision)},
         {"parse_status", to_string(v.parse_status)}};
  if (v.reasoning) j["reasoning"] = *v.reasoning;
  return j;
}

ConstraintVerdict verdict_from_json(const json& j) {
  ConstraintVerdict v;
  v.constraint_index = j.at("constraint_index").get<int>();
  v.decision = decision_from_string(j.at("decision").get<std::string>());
  v.parse_status = parse_status_from_string(j.at("parse_status").get<std::string>());
  if (j.contains("reasoning") && !j["reasoning"].is_null()) {
    v.reasoning = j["reasoning"].get<std::string>();
  }
  return v;
}

json feedback_to_json(const Feedback& v) {
  json unmet = json::array();
  for (const auto& [idx, text] : v.unmet) unmet.push_back(json::array({idx, text}));
  return json{{"unmet", unmet}, {"all_satisfied", v.all_satisfied}};
}

Feedback feedback_from_json(const json& j) {
  Feedback f;
  for (const auto& pair : j.at("unmet")) {
    f.unmet.emplace_back(pair.at(0).get<int>(), pair.at(1).get<std::string>());
  }
  f.all_satisfied = j.at("all_satisfied").get<bool>();
  return f;
}

json decoding_to_json(const DecodingParams& v) {
  json j{{"mode", v.mode == DecodingParams::Mode::greedy ? "greedy" : "sampling"},
         {"temperature", v.temperature}};
  if (v.seed) j["seed"] = *v.seed;
  return j;
}

DecodingParams decoding_from_json(const json& j) {
  DecodingParams d;
  const std::string mode = j.value("mode", std::string{"greedy"});
  if (mode == "greedy") {
    d.mode = DecodingParams::Mode::greedy;
  } else if (mode == "sampling") {
    d.mode = DecodingParams::Mode::sampling;
  } else {
    bad_enum("decoding mode", mode);
  }
  d.temperature = j.value("temperature", 1.0);
  if (j.contains("seed") && !j["seed"].is_null()) d.seed = j["seed"].get<long>();
  return d;
}

namespace {

json usage_to_json(const TokenUsage& u) {
  return json{{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}};
}

TokenUsage usage_from_json(const json& j) {
  TokenUsage u;
  u.input_tokens = j.value("input_tokens", 0L);
  u.output_tokens = j.value("output_tokens", 0L);
  return u;
}

json iteration_to_json(const IterationRecord& it) {
  json j{{"response", it.response},
         {"decoding", decoding_to_json(it.decoding)},
         {"usage", usage_to_json(it.usage)},
         {"wall_time_ms", it.wall_time_ms}};
  json verdicts = json::array();
  for (const auto& v : it.verdicts) verdicts.push_back(verdict_to_json(v));
  j["verdicts"] = verdicts;
  if (it.feedback) j["feedback"] = feedback_to_json(*it.feedback);
  if (it.critique) j["critique"] = *it.critique;
  if (it.prompt_variant) j["prompt_variant"] = *it.prompt_variant;
  return j;
}

IterationRecord iteration_from_json(const json& j) {
  IterationRecord it;
  it.response = j.at("response").get<std::string>();
  for (const auto& vj : j.at("verdicts")) it.verdicts.push_back(verdict_from_json(vj));
  if (j.contains("feedback") && !j["feedback"].is_null()) {
    it.feedback = feedback_from_json(j["feedback"]);
  }
  if (j.contains("critique") && !j["critique"].is_null()) {
    it.critique = j["critique"].get<std::string>();
  }
  it.decoding = decoding_from_json(j.at("decoding"));
  if (j.contains("prompt_variant") && !j["prompt_variant"].is_null()) {
    it.prompt_variant = j["prompt_variant"].get<std::string>();
  }
  it.usage = usage_from_json(j.at("usage"));
  it.wall_time_ms = j.value("wall_time_ms", 0L);
  return it;
}

}  // namespace

json trace_to_json(const RunTrace& v) {
  json iters = json::array();
  for (const auto& it : v.iterations) iters.push_back(iteration_to_json(it));
  json constraints = json::array();
  for (const auto& c : v.working_constraints) constraints.push_back(constraint_to_json(c));
  json j{{"instruction_id", v.instruction_id},
         {"strategy", to_string(v.strategy)},
         {"iterations", iters},
         {"final_index", v.final_index},
         {"terminal_status", to_string(v.terminal_status)},
         {"working_constraints", constraints},
         {"decompose_usage", usage_to_json(v.decompose_usage)}};
  if (v.decompose_output) j["decompose_output"] = *v.decompose_output;
  return j;
}

RunTrace trace_from_json(const json& j) {
  RunTrace t;
  t.instruction_id = j.at("instruction_id").get<std::string>();
  t.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  for (const auto& ij : j.at("iterations")) t.iterations.push_back(iteration_from_json(ij));
  t.final_index = j.at("final_index").get<int>();
  t.terminal_status = terminal_status_from_string(j.at("terminal_status").get<std::string>());
  for (const auto& cj : j.at("working_constraints")) {
    t.working_constraints.push_back(constraint_from_json(cj));
  }
  if (j.contains("decompose_output") && !j["decompose_output"].is_null()) {
    t.decompose_output = j["decompose_output"].get<std::string>();
  }
  if (j.contains("decompose_usage")) t.decompose_usage = usage_from_json(j["decompose_usage"]);
  t.validate();
  return t;
}

namespace {

Instruction instruction_from_ifeval(const json& j) {
  Instruction ins;
  if (j.contains("key")) {
    ins.id = "ifeval-" + (j["key"].is_string() ? j["key"].get<std::string>() : j["key"].dump());
  } else {
    ins.id = "ifeval-" + j.at("prompt").get<std::string>().substr(0, 24);
  }
  ins.raw_text = j.at("prompt").get<std::string>();
  ins.source = Source::ifeval;
  std::vector<Constraint> constraints;
  const auto& ids = j.at("instruction_id_list");
  const json kwargs_list = j.value("kwargs", json::array());
  for (size_t i = 0; i < ids.size(); ++i) {
    const std::string rule_id = ids[i].get<std::string>();
    const json kw = i < kwargs_list.size() && kwargs_list[i].is_object() ? kwargs_list[i]
                                                                         : json::object();
    auto with_rule = [&](std::string text, RuleSpec rule) {
      Constraint c;
      c.text = std::move(text);
      rule.validate();
      c.rule = std::move(rule);
      constraints.push_back(std::move(c));
    };
    if (rule_id == "keywords:existence") {
      for (const auto& kwd : kw.value("keywords", json::array())) {
        RuleSpec r;
        r.kind = RuleSpec::Kind::include_keyword;
        r.keyword = kwd.get<std::string>();
        with_rule("Include the keyword \"" + r.keyword + "\" in the response.", r);
      }
    } else if (rule_id == "keywords:forbidden_words") {
      for (const auto& kwd : kw.value("forbidden_words", json::array())) {
        RuleSpec r;
        r.kind = RuleSpec::Kind::forbid_keyword;
        r.keyword = kwd.get<std::string>();
        with_rule("Do not include the keyword \"" + r.keyword + "\" in the response.", r);
      }
    } else if (rule_id == "keywords:frequency") {
      RuleSpec r;
      r.kind = RuleSpec::Kind::keyword_frequency;
      r.keyword = kw.at("keyword").get<std::string>();
      const std::string relation = kw.value("relation", std::string{"at least"});
      long frequency = kw.at("frequency").get<long>();
      if (relation == "less than") {
        r.relation = "at_most";
        r.count = frequency - 1;
      } else {
        r.relation = "at_least";
        r.count = frequency;
      }
      with_rule("Mention the keyword \"" + r.keyword + "\" " + relation + " " +
                    std::to_string(frequency) + " times.",
                r);
    } else if (rule_id == "length_constraints:number_words") {
      RuleSpec r;
      const std::string relation = kw.value("relation", std::string{"at least"});
      long num_words = kw.at("num_words").get<long>();
      if (relation == "less than") {
        r.kind = RuleSpec::Kind::max_words;
        r.limit = num_words - 1;
      } else {
        r.kind = RuleSpec::Kind::min_words;
        r.limit = num_words;
      }
      with_rule("Answer with " + relation + " " + std::to_string(num_words) + " words.", r);
    } else if (rule_id == "detectable_format:number_bullet_lists") {
      RuleSpec r;
      r.kind = RuleSpec::Kind::bullet_count;
      r.count = kw.at("num_bullets").get<long>();
      with_rule("Answer with exactly " + std::to_string(r.count) + " bullet points.", r);
    } else if (rule_id == "detectable_format:json_format") {
      RuleSpec r;
      r.kind = RuleSpec::Kind::json_parseable;
      with_rule("Wrap the entire response in JSON format.", r);
    } else {
      // Declared-but-unmapped rule type: text only, judgeable by model critics.
      Constraint c;
      c.text = "Follow the \"" + rule_id + "\" requirement" +
               (kw.empty() ? std::string{"."} : " with parameters " + kw.dump() + ".");
      constraints.push_back(std::move(c));
    }
  }
  ins.gold_constraints = std::move(constraints);
  ins.validate();
  return ins;
}

}  // namespace

std::vector<Instruction> load_dataset(const std::string& path, Source format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<Instruction> out;
  std::set<std::string> seen;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed JSON line: " + e.what());
    }
    try {
      Instruction ins = format == Source::ifeval ? instruction_from_ifeval(j)
                                                 : instruction_from_json(j);
      if (format == Source::realinstruct) ins.source = Source::realinstruct;
      if (!seen.insert(ins.id).second) {
        throw std::invalid_argument("duplicate instruction id \"" + ins.id + "\"");
      }
      out.push_back(std::move(ins));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_traces(const std::vector<RunTrace>& traces, const std::string& path) {
  std::ostringstream body;
  for (const auto& t : traces) body << trace_to_json(t).dump() << "\n";
  write_file_atomic(path, body.str());
}

std::vector<RunTrace> load_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  std::vector<RunTrace> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trace_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  static std::atomic<unsigned> counter{0};
  const std::string tmp =
      path + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace decrim
