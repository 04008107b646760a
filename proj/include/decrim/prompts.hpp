#pragma once

#include <map>
#include <string>
#include <vector>

#include "decrim/core.hpp"

namespace decrim {

struct PromptTemplate {
  std::string name;
  std::string body;
  std::vector<std::string> placeholders;  // in order of first occurrence
};

// Templates live as data files next to a manifest.json pinning their SHA-256
// digests; loading verifies every digest so template drift is loud.
class PromptRegistry {
 public:
  static PromptRegistry load_dir(const std::string& dir);

  bool has(const std::string& name) const;
  const PromptTemplate& get(const std::string& name) const;
  std::string render(const std::string& name,
                     const std::map<std::string, std::string>& bindings) const;
  std::vector<std::string> names() const;

  // Single-pass ${name} substitution; values are inserted raw (never rescanned),
  // so braces inside values cannot break rendering. Unbound placeholder -> error
  // naming it.
  static std::string render_body(const std::string& body,
                                 const std::map<std::string, std::string>& bindings);
  static std::vector<std::string> extract_placeholders(const std::string& body);

 private:
  std::map<std::string, PromptTemplate> templates_;
};

// Splits on leading "N." / "N)" item markers at line starts; text before the
// first marker is dropped; items are trimmed and empty items removed.
std::vector<std::string> parse_enumerated_list(const std::string& text);

struct ThreePart {
  std::string task;
  std::string context;
  std::vector<std::string> constraints;
};

// Extracts the "Translated Task/Context/Constraints" sections. Task header is
// required; context is optional (absent -> empty); headers must appear in the
// fixed order. Throws std::runtime_error with the raw text attached.
ThreePart parse_three_part(const std::string& text);

// Scans for the last "Constraint followed" / "Constraint not followed" marker
// before the first "<END>"; text before the marker (minus the "Final Answer"
// connective) is kept as reasoning. No marker -> parse_status
// unparseable_defaulted with the given default decision.
ConstraintVerdict parse_verdict_single(const std::string& text, Decision unparseable_default);

// Splits on "<END>" and pairs segments with constraint indices in order.
// Always returns exactly n_constraints verdicts; missing segments are filled
// with unparseable_defaulted defaults.
std::vector<ConstraintVerdict> parse_verdict_multi(const std::string& text, int n_constraints,
                                                   Decision unparseable_default);

}  // namespace decrim
