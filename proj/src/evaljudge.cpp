#include "decrim/evaljudge.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

namespace decrim {

void JudgeSample::validate() const {
  if (instruction_id.empty()) throw std::invalid_argument("judge sample requires instruction_id");
  if (instruction.empty()) {
    throw std::invalid_argument("judge sample " + instruction_id + " requires instruction text");
  }
  if (constraint.empty()) {
    throw std::invalid_argument("judge sample " + instruction_id + " requires constraint text");
  }
  if (constraint_index < 0) {
    throw std::invalid_argument("judge sample " + instruction_id +
                                " requires a non-negative constraint_index");
  }
  if (rule) rule->validate();
  if (annotator_labels && annotator_labels->size() < 2) {
    throw std::invalid_argument("judge sample " + instruction_id +
                                " annotator_labels require at least two raters");
  }
}

std::vector<JudgeSample> load_judge_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open judge samples: " + path);
  std::vector<JudgeSample> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      JudgeSample s;
      s.instruction_id = j.at("instruction_id").get<std::string>();
      s.instruction = j.at("instruction").get<std::string>();
      s.constraint_index = j.value("constraint_index", 0);
      s.constraint = j.at("constraint").get<std::string>();
      if (j.contains("rule") && !j["rule"].is_null()) s.rule = rule_spec_from_json(j["rule"]);
      s.response = j.at("response").get<std::string>();
      s.gold = label_from_string(j.at("gold").get<std::string>());
      if (j.contains("annotator_labels") && !j["annotator_labels"].is_null()) {
        std::vector<Label> labels;
        for (const auto& lj : j["annotator_labels"]) {
          labels.push_back(label_from_string(lj.get<std::string>()));
        }
        s.annotator_labels = std::move(labels);
      }
      s.validate();
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string to_string(BaselineKind v) {
  switch (v) {
    case BaselineKind::all_satisfied: return "all_satisfied";
    case BaselineKind::all_not_satisfied: return "all_not_satisfied";
    case BaselineKind::majority_vote: return "majority_vote";
  }
  return "all_satisfied";
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "all_satisfied") return BaselineKind::all_satisfied;
  if (s == "all_not_satisfied") return BaselineKind::all_not_satisfied;
  if (s == "majority_vote") return BaselineKind::majority_vote;
  throw std::invalid_argument("unknown baseline kind: \"" + s + "\"");
}

namespace {

Label majority_label(const std::vector<Label>& labels, std::optional<Label> tie_rule,
                     const std::string& sample_id) {
  long sat = 0;
  for (const Label& l : labels) {
    if (l == Label::satisfied) ++sat;
  }
  const long not_sat = static_cast<long>(labels.size()) - sat;
  if (sat > not_sat) return Label::satisfied;
  if (not_sat > sat) return Label::not_satisfied;
  if (!tie_rule) {
    throw std::invalid_argument("annotator tie on sample " + sample_id + " with no tie rule");
  }
  return *tie_rule;
}

}  // namespace

std::vector<Label> baseline_predict(BaselineKind kind, const std::vector<JudgeSample>& samples,
                                    std::optional<Label> tie_rule) {
  std::vector<Label> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    switch (kind) {
      case BaselineKind::all_satisfied:
        out.push_back(Label::satisfied);
        break;
      case BaselineKind::all_not_satisfied:
        out.push_back(Label::not_satisfied);
        break;
      case BaselineKind::majority_vote:
        if (!s.annotator_labels) {
          throw std::invalid_argument("sample " + s.instruction_id +
                                      " has no annotator labels for majority voting");
        }
        out.push_back(majority_label(*s.annotator_labels, tie_rule, s.instruction_id));
        break;
    }
  }
  return out;
}

namespace {

JudgeReliabilityReport score(const std::vector<Label>& preds, const std::vector<Label>& golds,
                             const std::vector<const JudgeSample*>& scored,
                             std::optional<Label> tie_rule) {
  JudgeReliabilityReport rep;
  const F1Result f1 = macro_f1(preds, golds);
  rep.macro_f1 = f1.macro_f1;
  rep.f1_negative = f1.f1_negative;
  rep.f1_positive = f1.f1_positive;
  rep.samples = static_cast<long>(preds.size());
  bool all_annotated = true;
  for (const JudgeSample* s : scored) {
    if (!s->annotator_labels) {
      all_annotated = false;
      break;
    }
  }
  if (all_annotated && !scored.empty()) {
    std::vector<Label> majority;
    majority.reserve(scored.size());
    for (const JudgeSample* s : scored) {
      majority.push_back(majority_label(*s->annotator_labels, tie_rule, s->instruction_id));
    }
    rep.kappa_vs_majority = cohens_kappa(preds, majority);
  }
  return rep;
}

}  // namespace

JudgeReliabilityReport evaluate_judge(const std::vector<JudgeSample>& samples,
                                      const JudgeConfig& judge, const PriceTable* prices,
                                      std::optional<Label> tie_rule) {
  judge.validate();
  if (samples.empty()) throw std::invalid_argument("evaluate_judge requires samples");
  const auto started = std::chrono::steady_clock::now();
  std::map<std::string, TokenUsage> usage_before;
  if (judge.backend) usage_before = judge.backend->usage();

  std::vector<Label> preds, golds;
  std::vector<const JudgeSample*> scored;
  long failures = 0, unparseable = 0;
  for (const auto& s : samples) {
    s.validate();
    Instruction ins;
    ins.id = s.instruction_id;
    ins.raw_text = s.instruction;
    Constraint c;
    c.text = s.constraint;
    c.rule = s.rule;
    try {
      const std::vector<ConstraintVerdict> verdicts = critique(ins, {c}, s.response, judge);
      if (verdicts.size() != 1) throw std::runtime_error("expected exactly one verdict");
      if (verdicts[0].parse_status == ParseStatus::unparseable_defaulted) ++unparseable;
      preds.push_back(decision_to_label(verdicts[0].decision));
      golds.push_back(s.gold);
      scored.push_back(&s);
    } catch (const std::exception&) {
      ++failures;
    }
  }
  if (preds.empty()) {
    throw std::runtime_error("every judge sample failed; nothing to score");
  }
  JudgeReliabilityReport rep = score(preds, golds, scored, tie_rule);
  rep.failures = failures;
  rep.unparseable = unparseable;
  rep.wall_time_sec = std::chrono::duration_cast<std::chrono::duration<double>>(
                          std::chrono::steady_clock::now() - started)
                          .count();
  if (prices && judge.backend) {
    std::map<std::string, TokenUsage> delta = judge.backend->usage();
    for (const auto& [model, before] : usage_before) {
      auto& u = delta[model];
      u.input_tokens -= before.input_tokens;
      u.output_tokens -= before.output_tokens;
    }
    rep.cost_usd = estimate_cost(delta, *prices);
  } else if (prices) {
    rep.cost_usd = 0.0;
  }
  return rep;
}

JudgeReliabilityReport evaluate_baseline(BaselineKind kind,
                                         const std::vector<JudgeSample>& samples,
                                         std::optional<Label> tie_rule) {
  if (samples.empty()) throw std::invalid_argument("evaluate_baseline requires samples");
  const std::vector<Label> preds = baseline_predict(kind, samples, tie_rule);
  std::vector<Label> golds;
  std::vector<const JudgeSample*> scored;
  golds.reserve(samples.size());
  for (const auto& s : samples) {
    golds.push_back(s.gold);
    scored.push_back(&s);
  }
  return score(preds, golds, scored, tie_rule);
}

json JudgeReliabilityReport::to_json() const {
  json j{{"macro_f1", macro_f1},
         {"f1_negative", f1_negative},
         {"f1_positive", f1_positive},
         {"samples", samples},
         {"failures", failures},
         {"unparseable", unparseable}};
  if (kappa_vs_majority) j["kappa_vs_majority"] = *kappa_vs_majority;
  if (cost_usd) j["cost_usd"] = *cost_usd;
  if (wall_time_sec) j["wall_time_sec"] = *wall_time_sec;
  return j;
}

ExportStats export_weak_supervision(const std::vector<WeakSupervisionRecord>& records,
                                    const std::string& out_path) {
  ExportStats stats;
  std::ostringstream body;
  for (const auto& r : records) {
    if (!r.reasoning || r.reasoning->empty()) {
      ++stats.skipped;
      continue;
    }
    const json j{{"instruction", r.instruction},
                 {"constraint", r.constraint},
                 {"response", r.response},
                 {"reasoning", *r.reasoning},
                 {"decision", to_string(r.decision)}};
    body << j.dump() << "\n";
    ++stats.written;
  }
  write_file_atomic(out_path, body.str());
  return stats;
}

std::vector<WeakSupervisionRecord> collect_weak_supervision(
    const Instruction& instruction, const std::vector<Constraint>& constraints,
    const std::string& response, const std::vector<ConstraintVerdict>& verdicts) {
  std::vector<WeakSupervisionRecord> out;
  for (const auto& v : verdicts) {
    if (v.constraint_index < 0 || v.constraint_index >= static_cast<int>(constraints.size())) {
      throw std::invalid_argument("verdict index " + std::to_string(v.constraint_index) +
                                  " has no matching constraint");
    }
    WeakSupervisionRecord r;
    r.instruction = instruction.raw_text;
    r.constraint = constraints[v.constraint_index].text;
    r.response = response;
    r.reasoning = v.reasoning;
    r.decision = v.decision;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace decrim
