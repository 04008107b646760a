#include "decrim/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>

#include "decrim/backend.hpp"

namespace decrim {

namespace {

constexpr const char* kFollowed = "Constraint followed";
constexpr const char* kNotFollowed = "Constraint not followed";
constexpr const char* kEnd = "<END>";

std::string rtrim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

std::string ltrim(std::string s) {
  size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

std::string trim(std::string s) { return ltrim(rtrim(std::move(s))); }

bool iequals(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i]))) {
      return false;
    }
  }
  return true;
}

bool iends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return iequals(s.substr(s.size() - suffix.size()), suffix);
}

// Drops a dangling "Final Answer is" / "Final Answer:" connective left over once
// the verdict marker that followed it has been cut away.
std::string strip_final_answer_connective(std::string s) {
  s = rtrim(std::move(s));
  for (const char* suffix : {"final answer is", "final answer:", "final answer"}) {
    if (iends_with(s, suffix)) {
      s = rtrim(s.substr(0, s.size() - std::string(suffix).size()));
      break;
    }
  }
  return s;
}

// Parses one verdict segment that contains no "<END>" delimiter.
ConstraintVerdict parse_segment(const std::string& segment, Decision unparseable_default) {
  ConstraintVerdict v;
  const size_t pos_followed = segment.rfind(kFollowed);
  const size_t pos_not = segment.rfind(kNotFollowed);
  size_t pos = std::string::npos;
  size_t len = 0;
  if (pos_not != std::string::npos && (pos_followed == std::string::npos || pos_not > pos_followed)) {
    pos = pos_not;
    len = std::string(kNotFollowed).size();
    v.decision = Decision::not_followed;
  } else if (pos_followed != std::string::npos) {
    pos = pos_followed;
    len = std::string(kFollowed).size();
    v.decision = Decision::followed;
  } else {
    v.decision = unparseable_default;
    v.parse_status = ParseStatus::unparseable_defaulted;
    return v;
  }
  const std::string tail = segment.substr(pos + len);
  v.parse_status = trim(tail).empty() ? ParseStatus::clean : ParseStatus::recovered;
  const std::string reasoning = strip_final_answer_connective(segment.substr(0, pos));
  if (!trim(reasoning).empty()) v.reasoning = trim(reasoning);
  return v;
}

bool is_blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace

ConstraintVerdict parse_verdict_single(const std::string& text, Decision unparseable_default) {
  std::string body = text;
  const size_t end = body.find(kEnd);
  if (end != std::string::npos) body = body.substr(0, end);
  ConstraintVerdict v = parse_segment(body, unparseable_default);
  v.constraint_index = 0;
  return v;
}

std::vector<ConstraintVerdict> parse_verdict_multi(const std::string& text, int n_constraints,
                                                   Decision unparseable_default) {
  if (n_constraints < 0) throw std::invalid_argument("n_constraints must be >= 0");
  std::vector<std::string> segments;
  size_t start = 0;
  const std::string delim = kEnd;
  while (true) {
    const size_t pos = text.find(delim, start);
    if (pos == std::string::npos) {
      segments.push_back(text.substr(start));
      break;
    }
    segments.push_back(text.substr(start, pos - start));
    start = pos + delim.size();
  }
  // The tail after the last delimiter is slack, not a verdict, when blank.
  if (segments.size() > 1 && is_blank(segments.back())) segments.pop_back();

  std::vector<ConstraintVerdict> out;
  for (size_t i = 0; i < segments.size() && static_cast<int>(out.size()) < n_constraints; ++i) {
    ConstraintVerdict v = parse_segment(segments[i], unparseable_default);
    v.constraint_index = static_cast<int>(out.size());
    out.push_back(std::move(v));
  }
  while (static_cast<int>(out.size()) < n_constraints) {
    ConstraintVerdict v;
    v.constraint_index = static_cast<int>(out.size());
    v.decision = unparseable_default;
    v.parse_status = ParseStatus::unparseable_defaulted;
    out.push_back(std::move(v));
  }
  return out;
}

namespace {

// Recognizes "1.", "12)", "-", "*", "•" item markers; returns the content start
// or npos when the line opens no item.
size_t item_content_start(const std::string& line) {
  size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (i >= line.size()) return std::string::npos;
  if (line[i] == '-' || line[i] == '*') {
    const size_t after = i + 1;
    if (after >= line.size() || line[after] == ' ' || line[after] == '\t') {
      return std::min(after + 1, line.size());
    }
    return std::string::npos;
  }
  if (line.compare(i, 3, "\xE2\x80\xA2") == 0) {  // UTF-8 bullet
    size_t after = i + 3;
    if (after < line.size() && (line[after] == ' ' || line[after] == '\t')) ++after;
    return after;
  }
  if (std::isdigit(static_cast<unsigned char>(line[i]))) {
    size_t d = i;
    while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
    if (d < line.size() && (line[d] == '.' || line[d] == ')')) {
      const size_t after = d + 1;
      if (after >= line.size() || line[after] == ' ' || line[after] == '\t') {
        return std::min(after + 1, line.size());
      }
    }
  }
  return std::string::npos;
}

}  // namespace

std::vector<std::string> parse_enumerated_list(const std::string& text) {
  std::vector<std::string> items;
  std::string current;
  bool in_item = false;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    const std::string line =
        nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos);
    const size_t content = item_content_start(line);
    if (content != std::string::npos) {
      if (in_item && !trim(current).empty()) items.push_back(trim(current));
      current = line.substr(content);
      in_item = true;
    } else if (in_item && !is_blank(line)) {
      current += " " + trim(line);
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  if (in_item && !trim(current).empty()) items.push_back(trim(current));
  return items;
}

namespace {

// Matches a section header line such as "Translated Task:"; returns the text
// after the colon, or nullopt when the line is not that header.
std::optional<std::string> match_header(const std::string& line,
                                        const std::vector<std::string>& names) {
  const std::string stripped = ltrim(line);
  for (const auto& name : names) {
    if (stripped.size() < name.size() + 1) continue;
    if (!iequals(stripped.substr(0, name.size()), name)) continue;
    size_t after = name.size();
    while (after < stripped.size() &&
           std::isspace(static_cast<unsigned char>(stripped[after]))) {
      ++after;
    }
    if (after < stripped.size() && stripped[after] == ':') {
      return stripped.substr(after + 1);
    }
  }
  return std::nullopt;
}

}  // namespace

ThreePart parse_three_part(const std::string& text) {
  enum class Section { none, task, context, constraints };
  Section section = Section::none;
  std::string task, context, constraints;
  bool saw_task = false, saw_constraints = false;

  auto append = [](std::string& dst, const std::string& line) {
    if (!dst.empty()) dst += "\n";
    dst += line;
  };

  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    const std::string line =
        nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos);
    if (auto rest = match_header(line, {"Translated Task", "Task"})) {
      section = Section::task;
      saw_task = true;
      if (!is_blank(*rest)) append(task, trim(*rest));
    } else if (auto rest = match_header(line, {"Translated Context", "Context"})) {
      section = Section::context;
      if (!is_blank(*rest)) append(context, trim(*rest));
    } else if (auto rest =
                   match_header(line, {"Translated Constraints", "Constraints", "Constraint"})) {
      section = Section::constraints;
      saw_constraints = true;
      if (!is_blank(*rest)) append(constraints, trim(*rest));
    } else {
      switch (section) {
        case Section::task: if (!is_blank(line)) append(task, trim(line)); break;
        case Section::context: if (!is_blank(line)) append(context, trim(line)); break;
        case Section::constraints: append(constraints, line); break;
        case Section::none: break;
      }
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  if (!saw_task || !saw_constraints) {
    const std::string missing = !saw_task ? "Task" : "Constraints";
    throw std::runtime_error("three-part output lacks a " + missing + " header; raw output:\n" +
                             text);
  }

  ThreePart out;
  out.task = trim(task);
  out.context = trim(context);
  if (iequals(out.context, "None") || iequals(out.context, "None.")) out.context.clear();
  out.constraints = parse_enumerated_list(constraints);
  if (out.constraints.empty() && !trim(constraints).empty()) {
    // A single unnumbered constraint still counts as one item.
    out.constraints.push_back(trim(constraints));
  }
  return out;
}

std::vector<std::string> PromptRegistry::extract_placeholders(const std::string& body) {
  std::vector<std::string> out;
  size_t pos = 0;
  while ((pos = body.find("${", pos)) != std::string::npos) {
    const size_t close = body.find('}', pos + 2);
    if (close == std::string::npos) break;
    const std::string name = body.substr(pos + 2, close - pos - 2);
    const bool valid = !name.empty() &&
                       std::all_of(name.begin(), name.end(), [](unsigned char c) {
                         return std::isalnum(c) || c == '_';
                       });
    if (valid) {
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
      pos = close + 1;
    } else {
      pos += 2;
    }
  }
  return out;
}

std::string PromptRegistry::render_body(const std::string& body,
                                        const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(body.size());
  size_t pos = 0;
  while (pos < body.size()) {
    const size_t open = body.find("${", pos);
    if (open == std::string::npos) {
      out.append(body, pos, std::string::npos);
      break;
    }
    out.append(body, pos, open - pos);
    const size_t close = body.find('}', open + 2);
    const std::string name =
        close == std::string::npos ? std::string{} : body.substr(open + 2, close - open - 2);
    const bool valid = !name.empty() &&
                       std::all_of(name.begin(), name.end(), [](unsigned char c) {
                         return std::isalnum(c) || c == '_';
                       });
    if (!valid) {
      out += "${";
      pos = open + 2;
      continue;
    }
    const auto it = values.find(name);
    if (it == values.end()) {
      throw std::invalid_argument("unbound placeholder \"" + name + "\" in template");
    }
    out += it->second;
    pos = close + 1;
  }
  return out;
}

PromptRegistry PromptRegistry::load_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("prompt manifest not found: " + manifest_path.string());
  }
  const json manifest = json::parse(read_file(manifest_path.string()));
  PromptRegistry reg;
  for (const auto& [filename, expected] : manifest.at("files").items()) {
    const fs::path file = fs::path(dir) / filename;
    if (!fs::exists(file)) {
      throw std::runtime_error("prompt file missing: " + file.string());
    }
    const std::string body = read_file(file.string());
    const std::string digest = sha256_hex(body);
    if (digest != expected.get<std::string>()) {
      throw std::runtime_error("prompt file changed since it was pinned: " + file.string());
    }
    PromptTemplate t;
    t.name = fs::path(filename).stem().string();
    t.body = body;
    t.placeholders = extract_placeholders(body);
    reg.templates_[t.name] = std::move(t);
  }
  return reg;
}

bool PromptRegistry::has(const std::string& name) const {
  return templates_.count(name) > 0;
}

const PromptTemplate& PromptRegistry::get(const std::string& name) const {
  const auto it = templates_.find(name);
  if (it == templates_.end()) {
    throw std::invalid_argument("unknown prompt template \"" + name + "\"");
  }
  return it->second;
}

std::string PromptRegistry::render(const std::string& name,
                                   const std::map<std::string, std::string>& values) const {
  return render_body(get(name).body, values);
}

std::vector<std::string> PromptRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(templates_.size());
  for (const auto& [name, _] : templates_) out.push_back(name);
  return out;
}

}  // namespace decrim
