#include "decrim/metrics.hpp"

#include <algorithm>
#include <cstdio>

namespace decrim {

namespace {

double f1_for_class(const std::vector<Label>& preds, const std::vector<Label>& gold,
                    Label positive) {
  long tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == positive;
    const bool g = gold[i] == positive;
    if (p && g) ++tp;
    else if (p && !g) ++fp;
    else if (!p && g) ++fn;
  }
  const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
  const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

F1Result macro_f1(const std::vector<Label>& preds, const std::vector<Label>& gold) {
  if (preds.empty()) throw std::invalid_argument("macro_f1 requires at least one sample");
  if (preds.size() != gold.size()) {
    throw std::invalid_argument("macro_f1 requires equally sized prediction and gold vectors");
  }
  F1Result r;
  r.f1_positive = f1_for_class(preds, gold, Label::satisfied);
  r.f1_negative = f1_for_class(preds, gold, Label::not_satisfied);
  r.macro_f1 = (r.f1_positive + r.f1_negative) / 2.0;
  return r;
}

double cohens_kappa(const std::vector<Label>& a, const std::vector<Label>& b) {
  if (a.empty()) throw std::invalid_argument("cohens_kappa requires at least one sample");
  if (a.size() != b.size()) {
    throw std::invalid_argument("cohens_kappa requires equally sized rating vectors");
  }
  const double n = static_cast<double>(a.size());
  long agree = 0, a_sat = 0, b_sat = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) ++agree;
    if (a[i] == Label::satisfied) ++a_sat;
    if (b[i] == Label::satisfied) ++b_sat;
  }
  const double p_o = agree / n;
  const double pa = a_sat / n, pb = b_sat / n;
  const double p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
  const double denom = 1.0 - p_e;
  if (denom == 0.0) return p_o == 1.0 ? 1.0 : 0.0;
  return (p_o - p_e) / denom;
}

double krippendorff_alpha(
    const std::vector<std::vector<std::optional<Label>>>& annotations) {
  if (annotations.empty()) {
    throw std::invalid_argument("krippendorff_alpha requires at least one rater");
  }
  const size_t n_units = annotations[0].size();
  for (const auto& rater : annotations) {
    if (rater.size() != n_units) {
      throw std::invalid_argument("krippendorff_alpha requires one entry per unit per rater");
    }
  }
  // Nominal-scale coincidence matrix over the two labels; each unit with m>=2
  // ratings contributes its ordered pairs with weight 1/(m-1).
  double o_ss = 0, o_sn = 0, o_ns = 0, o_nn = 0;
  for (size_t u = 0; u < n_units; ++u) {
    std::vector<Label> present;
    for (const auto& rater : annotations) {
      if (rater[u]) present.push_back(*rater[u]);
    }
    const size_t m = present.size();
    if (m < 2) continue;
    const double w = 1.0 / static_cast<double>(m - 1);
    for (size_t i = 0; i < m; ++i) {
      for (size_t j = 0; j < m; ++j) {
        if (i == j) continue;
        const bool si = present[i] == Label::satisfied;
        const bool sj = present[j] == Label::satisfied;
        if (si && sj) o_ss += w;
        else if (si && !sj) o_sn += w;
        else if (!si && sj) o_ns += w;
        else o_nn += w;
      }
    }
  }
  const double n = o_ss + o_sn + o_ns + o_nn;
  if (n == 0.0) {
    throw std::invalid_argument("krippendorff_alpha requires a unit with two or more ratings");
  }
  const double n_s = o_ss + o_sn;
  const double n_n = o_ns + o_nn;
  const double d_o = (o_sn + o_ns) / n;
  const double d_e = (n_s * n_n + n_n * n_s) / (n * (n - 1.0));
  if (d_e == 0.0) return 1.0;
  return 1.0 - d_o / d_e;
}

int truncated_final_index(const RunTrace& trace, std::optional<int> at_n) {
  if (!at_n) return trace.final_index;
  if (*at_n < 0) throw std::invalid_argument("at_n must be >= 0");
  const int limit = std::min<int>(*at_n, static_cast<int>(trace.iterations.size()) - 1);
  if (trace.strategy == Strategy::generate_and_rank) {
    for (int i = 0; i <= limit; ++i) {
      const auto& fb = trace.iterations[i].feedback;
      if (fb && fb->all_satisfied) return i;
    }
    return limit;
  }
  return std::min(trace.final_index, limit);
}

EvalReport accuracy_report(const std::vector<RunTrace>& traces, std::optional<int> at_n) {
  if (traces.empty()) throw std::invalid_argument("accuracy_report requires at least one trace");
  std::string missing;
  for (const auto& trace : traces) {
    const int idx = truncated_final_index(trace, at_n);
    if (trace.iterations.at(idx).verdicts.empty()) {
      missing += missing.empty() ? trace.instruction_id : ", " + trace.instruction_id;
    }
  }
  if (!missing.empty()) {
    throw std::runtime_error("traces with no verdicts at the scored iteration: " + missing +
                             "; evaluate them first");
  }
  EvalReport rep;
  std::map<std::string, std::pair<long, long>> per_cat;  // category -> {followed, total}
  bool any_category = false;
  for (const auto& trace : traces) {
    const int idx = truncated_final_index(trace, at_n);
    const auto& iter = trace.iterations.at(idx);
    ++rep.instructions;
    bool all_followed = true;
    for (const auto& v : iter.verdicts) {
      ++rep.constraints;
      const bool followed = v.decision == Decision::followed;
      if (followed) ++rep.followed_constraints;
      else all_followed = false;
      if (v.constraint_index >= 0 &&
          v.constraint_index < static_cast<int>(trace.working_constraints.size())) {
        const auto& cat = trace.working_constraints[v.constraint_index].category;
        if (cat) {
          any_category = true;
          auto& [f, t] = per_cat[*cat];
          if (followed) ++f;
          ++t;
        }
      }
    }
    if (all_followed) ++rep.satisfied_instructions;
  }
  rep.instruction_accuracy = static_cast<double>(rep.satisfied_instructions) / rep.instructions;
  rep.constraint_accuracy = static_cast<double>(rep.followed_constraints) / rep.constraints;
  if (any_category) {
    std::map<std::string, double> acc;
    for (const auto& [cat, ft] : per_cat) {
      acc[cat] = static_cast<double>(ft.first) / ft.second;
    }
    rep.per_category = std::move(acc);
  }
  return rep;
}

json EvalReport::to_json() const {
  json j{{"instruction_accuracy", instruction_accuracy},
         {"constraint_accuracy", constraint_accuracy},
         {"instructions", instructions},
         {"constraints", constraints},
         {"satisfied_instructions", satisfied_instructions},
         {"followed_constraints", followed_constraints}};
  if (per_category) {
    json cats = json::object();
    for (const auto& [cat, acc] : *per_category) cats[cat] = acc;
    j["per_category"] = cats;
  }
  return j;
}

std::string format_pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", fraction * 100.0);
  return buf;
}

}  // namespace decrim
