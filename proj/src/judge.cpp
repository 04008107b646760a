#include "decrim/judge.hpp"

#include <cctype>

namespace decrim {

namespace {

std::string lowered(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

long count_occurrences(const std::string& haystack_lower, const std::string& needle_lower) {
  if (needle_lower.empty()) return 0;
  long n = 0;
  size_t pos = 0;
  while ((pos = haystack_lower.find(needle_lower, pos)) != std::string::npos) {
    ++n;
    pos += needle_lower.size();
  }
  return n;
}

bool relation_holds(long actual, const std::string& relation, long target) {
  if (relation == "at_least") return actual >= target;
  if (relation == "at_most") return actual <= target;
  return actual == target;
}

long count_bullet_lines(const std::string& text) {
  long n = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    const std::string line =
        nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos);
    size_t i = 0;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i < line.size()) {
      if ((line[i] == '-' || line[i] == '*') &&
          (i + 1 >= line.size() || line[i + 1] == ' ' || line[i + 1] == '\t')) {
        ++n;
      } else if (line.compare(i, 3, "\xE2\x80\xA2") == 0) {
        ++n;
      }
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  return n;
}

}  // namespace

long count_words(const std::string& text) {
  long n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

Decision rule_check(const RuleSpec& rule, const std::string& response) {
  rule.validate();
  bool ok = false;
  switch (rule.kind) {
    case RuleSpec::Kind::max_words:
      ok = count_words(response) <= rule.limit;
      break;
    case RuleSpec::Kind::min_words:
      ok = count_words(response) >= rule.limit;
      break;
    case RuleSpec::Kind::include_keyword:
      ok = lowered(response).find(lowered(rule.keyword)) != std::string::npos;
      break;
    case RuleSpec::Kind::forbid_keyword:
      ok = lowered(response).find(lowered(rule.keyword)) == std::string::npos;
      break;
    case RuleSpec::Kind::keyword_frequency:
      ok = relation_holds(count_occurrences(lowered(response), lowered(rule.keyword)),
                          rule.relation, rule.count);
      break;
    case RuleSpec::Kind::bullet_count:
      ok = relation_holds(count_bullet_lines(response), rule.relation, rule.count);
      break;
    case RuleSpec::Kind::json_parseable: {
      size_t begin = response.find_first_not_of(" \t\r\n");
      size_t end = response.find_last_not_of(" \t\r\n");
      if (begin == std::string::npos) {
        ok = false;
      } else {
        ok = json::accept(response.substr(begin, end - begin + 1));
      }
      break;
    }
    case RuleSpec::Kind::starts_with: {
      const size_t begin = response.find_first_not_of(" \t\r\n");
      ok = begin != std::string::npos && response.compare(begin, rule.keyword.size(),
                                                          rule.keyword) == 0;
      break;
    }
  }
  return ok ? Decision::followed : Decision::not_followed;
}

void JudgeConfig::validate() const {
  if (max_output_tokens <= 0) throw std::invalid_argument("max_output_tokens must be > 0");
  if (decoding.mode == DecodingParams::Mode::sampling && decoding.temperature <= 0) {
    throw std::invalid_argument("sampling requires temperature > 0");
  }
  if (strategy != JudgeStrategy::rule_based) {
    if (!backend) throw std::invalid_argument("model-based judging requires a backend");
    if (!prompts) throw std::invalid_argument("model-based judging requires prompt templates");
  }
}

std::string format_constraint_dict(const std::vector<Constraint>& constraints) {
  std::string out = "{";
  for (size_t i = 0; i < constraints.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(i) + ": " + constraints[i].text;
  }
  out += "}";
  return out;
}

std::vector<ConstraintVerdict> critique(const Instruction& instruction,
                                        const std::vector<Constraint>& constraints,
                                        const std::string& response, const JudgeConfig& cfg) {
  cfg.validate();
  if (constraints.empty()) return {};

  if (cfg.strategy == JudgeStrategy::rule_based) {
    std::vector<ConstraintVerdict> out;
    for (size_t i = 0; i < constraints.size(); ++i) {
      if (!constraints[i].rule) {
        throw std::runtime_error("constraint " + std::to_string(i) +
                                 " is not rule-checkable: \"" + constraints[i].text + "\"");
      }
      ConstraintVerdict v;
      v.constraint_index = static_cast<int>(i);
      v.decision = rule_check(*constraints[i].rule, response);
      v.parse_status = ParseStatus::clean;
      out.push_back(std::move(v));
    }
    return out;
  }

  if (cfg.strategy == JudgeStrategy::icl_inst) {
    const std::string prompt =
        cfg.prompts->render("judge_icl_inst",
                            {{"instruction", instruction.raw_text},
                             {"generated_response", response},
                             {"constraint_dict", format_constraint_dict(constraints)}});
    GenerationRequest req =
        make_request(*cfg.backend, prompt, cfg.decoding, cfg.max_output_tokens);
    const GenerationResult res = cfg.backend->generate(req);
    return parse_verdict_multi(res.text, static_cast<int>(constraints.size()),
                               cfg.unparseable_default);
  }

  const std::string tmpl = cfg.strategy == JudgeStrategy::icl_const ? "judge_icl_const"
                                                                    : "judge_icl_const_cot";
  std::vector<ConstraintVerdict> out;
  for (size_t i = 0; i < constraints.size(); ++i) {
    const std::string prompt = cfg.prompts->render(tmpl, {{"instruction", instruction.raw_text},
                                                          {"generated_response", response},
                                                          {"constraint_dict",
                                                           constraints[i].text}});
    GenerationRequest req =
        make_request(*cfg.backend, prompt, cfg.decoding, cfg.max_output_tokens);
    const GenerationResult res = cfg.backend->generate(req);
    ConstraintVerdict v = parse_verdict_single(res.text, cfg.unparseable_default);
    v.constraint_index = static_cast<int>(i);
    out.push_back(std::move(v));
  }
  return out;
}

Feedback build_feedback(const std::vector<Constraint>& constraints,
                        const std::vector<ConstraintVerdict>& verdicts) {
  Feedback fb;
  for (const auto& v : verdicts) {
    if (v.decision == Decision::followed) continue;
    if (v.constraint_index < 0 || v.constraint_index >= static_cast<int>(constraints.size())) {
      throw std::invalid_argument("verdict index " + std::to_string(v.constraint_index) +
                                  " has no matching constraint");
    }
    fb.unmet.emplace_back(v.constraint_index, constraints[v.constraint_index].text);
  }
  fb.all_satisfied = fb.unmet.empty();
  return fb;
}

}  // namespace decrim
