#include "decrim/dataprep.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace decrim {

namespace fs = std::filesystem;

std::string ConvRecord::user_text() const {
  std::string out;
  for (const auto& t : turns) {
    if (t.role != "user") continue;
    if (!out.empty()) out += "\n";
    out += t.content;
  }
  return out;
}

std::string ConvRecord::dialog_rendering() const {
  std::string out;
  for (const auto& t : turns) {
    if (t.role != "user") continue;
    if (!out.empty()) out += "\n";
    out += "Human: " + t.content;
  }
  return out;
}

json conv_record_to_json(const ConvRecord& r) {
  json turns = json::array();
  for (const auto& t : r.turns) {
    turns.push_back(json{{"role", t.role}, {"content", t.content}});
  }
  return json{{"id", r.id}, {"turns", turns}};
}

ConvRecord conv_record_from_json(const json& j) {
  ConvRecord r;
  r.id = j.at("id").is_string() ? j["id"].get<std::string>() : j["id"].dump();
  for (const auto& tj : j.at("turns")) {
    ConvTurn t;
    t.role = tj.at("role").get<std::string>();
    t.content = tj.at("content").get<std::string>();
    if (t.role != "user" && t.role != "assistant" && t.role != "system") {
      throw std::invalid_argument("record " + r.id + ": unknown turn role \"" + t.role + "\"");
    }
    r.turns.push_back(std::move(t));
  }
  if (r.id.empty()) throw std::invalid_argument("conversation record requires an id");
  return r;
}

std::vector<ConvRecord> load_conversations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open conversations: " + path);
  std::vector<ConvRecord> out;
  std::set<std::string> seen;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ConvRecord r = conv_record_from_json(json::parse(line));
      if (!seen.insert(r.id).second) {
        throw std::invalid_argument("duplicate conversation id \"" + r.id + "\"");
      }
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string to_string(StageKind v) {
  switch (v) {
    case StageKind::strip_assistant: return "strip_assistant";
    case StageKind::language_filter: return "language_filter";
    case StageKind::code_filter: return "code_filter";
    case StageKind::first_turn_only: return "first_turn_only";
    case StageKind::constraint_filter: return "constraint_filter";
    case StageKind::review_export: return "review_export";
  }
  return "strip_assistant";
}

StageKind stage_kind_from_string(const std::string& s) {
  if (s == "strip_assistant") return StageKind::strip_assistant;
  if (s == "language_filter") return StageKind::language_filter;
  if (s == "code_filter") return StageKind::code_filter;
  if (s == "first_turn_only") return StageKind::first_turn_only;
  if (s == "constraint_filter") return StageKind::constraint_filter;
  if (s == "review_export") return StageKind::review_export;
  throw std::invalid_argument("unknown stage kind: \"" + s + "\"");
}

std::vector<StageKind> default_stage_order() {
  return {StageKind::strip_assistant, StageKind::language_filter, StageKind::code_filter,
          StageKind::first_turn_only, StageKind::constraint_filter, StageKind::review_export};
}

bool AsciiRatioDetector::is_target_language(const std::string& text) const {
  if (text.empty()) return true;
  size_t ascii = 0;
  for (unsigned char c : text) {
    if (c < 0x80) ++ascii;
  }
  return static_cast<double>(ascii) / text.size() >= threshold_;
}

YesNo parse_yes_no(const std::string& text) {
  size_t i = 0;
  while (i < text.size() &&
         (std::isspace(static_cast<unsigned char>(text[i])) || text[i] == '"' ||
          text[i] == '\'')) {
    ++i;
  }
  auto word_is = [&](const char* word) {
    const size_t len = std::string(word).size();
    if (text.size() - i < len) return false;
    for (size_t k = 0; k < len; ++k) {
      if (std::tolower(static_cast<unsigned char>(text[i + k])) != word[k]) return false;
    }
    const size_t after = i + len;
    return after >= text.size() || !std::isalpha(static_cast<unsigned char>(text[after]));
  };
  if (word_is("yes")) return YesNo::yes;
  if (word_is("no")) return YesNo::no;
  return YesNo::drift;
}

namespace {

// Classifier call with one drift retry. Throws on backend failure.
YesNo classify(TextBackend& backend, const std::string& prompt) {
  DecodingParams greedy;
  GenerationRequest req = make_request(backend, prompt, greedy, 16);
  YesNo yn = parse_yes_no(backend.generate(req).text);
  if (yn == YesNo::drift) {
    yn = parse_yes_no(backend.generate(req).text);
  }
  return yn;
}

void require_classifier(const StageDeps& deps, StageKind stage) {
  if (!deps.classifier) {
    throw std::invalid_argument("stage " + to_string(stage) + " requires a classifier backend");
  }
  if (!deps.prompts) {
    throw std::invalid_argument("stage " + to_string(stage) + " requires prompt templates");
  }
}

}  // namespace

StageOutcome filter_stage(const std::vector<ConvRecord>& records, StageKind stage,
                          const StageDeps& deps) {
  StageOutcome out;
  switch (stage) {
    case StageKind::strip_assistant: {
      for (ConvRecord r : records) {
        std::vector<ConvTurn> turns;
        for (auto& t : r.turns) {
          if (t.role != "assistant") turns.push_back(std::move(t));
        }
        r.turns = std::move(turns);
        if (r.user_text().empty()) {
          out.dropped.push_back(std::move(r));
        } else {
          out.kept.push_back(std::move(r));
        }
      }
      break;
    }
    case StageKind::language_filter: {
      const AsciiRatioDetector fallback;
      const LanguageDetector& detector =
          deps.language ? static_cast<const LanguageDetector&>(*deps.language) : fallback;
      for (const ConvRecord& r : records) {
        if (detector.is_target_language(r.user_text())) {
          out.kept.push_back(r);
        } else {
          out.dropped.push_back(r);
        }
      }
      break;
    }
    case StageKind::code_filter: {
      require_classifier(deps, stage);
      for (const ConvRecord& r : records) {
        const std::string prompt =
            deps.prompts->render("classify_code", {{"dialog", r.dialog_rendering()}});
        try {
          switch (classify(*deps.classifier, prompt)) {
            case YesNo::yes: out.dropped.push_back(r); break;  // contains code
            case YesNo::no: out.kept.push_back(r); break;
            case YesNo::drift: out.flagged.push_back(r); break;
          }
        } catch (const std::exception&) {
          out.retry.push_back(r);
        }
      }
      break;
    }
    case StageKind::first_turn_only: {
      for (const ConvRecord& r : records) {
        const auto first_user = std::find_if(r.turns.begin(), r.turns.end(),
                                             [](const ConvTurn& t) { return t.role == "user"; });
        if (first_user == r.turns.end()) {
          out.dropped.push_back(r);
          continue;
        }
        ConvRecord trimmed;
        trimmed.id = r.id;
        trimmed.turns = {*first_user};
        out.kept.push_back(std::move(trimmed));
      }
      break;
    }
    case StageKind::constraint_filter: {
      require_classifier(deps, stage);
      for (const ConvRecord& r : records) {
        const std::string prompt =
            deps.prompts->render("classify_constrained", {{"request", r.user_text()}});
        try {
          switch (classify(*deps.classifier, prompt)) {
            case YesNo::yes: out.kept.push_back(r); break;  // carries constraints
            case YesNo::no: out.dropped.push_back(r); break;
            case YesNo::drift: out.flagged.push_back(r); break;
          }
        } catch (const std::exception&) {
          out.retry.push_back(r);
        }
      }
      break;
    }
    case StageKind::review_export: {
      out.kept = records;
      if (!deps.review_path.empty()) {
        std::ostringstream body;
        for (const auto& r : records) body << conv_record_to_json(r).dump() << "\n";
        write_file_atomic(deps.review_path, body.str());
      }
      break;
    }
  }
  return out;
}

Decomposed decompose_instruction(const ConvRecord& record, TextBackend& backend,
                                 const PromptRegistry& prompts) {
  const std::string prompt =
      prompts.render("decompose_three_part", {{"instruction", record.user_text()}});
  DecodingParams greedy;
  GenerationRequest req = make_request(backend, prompt, greedy, 1024);
  Decomposed d;
  d.raw_output = backend.generate(req).text;
  // The prompt itself ends with the task header, so completions often start
  // with the bare task text; re-attach the header before parsing.
  std::string to_parse = d.raw_output;
  const size_t first = to_parse.find_first_not_of(" \t\r\n");
  bool has_header = false;
  if (first != std::string::npos) {
    for (const char* h : {"Translated Task", "Task"}) {
      const std::string header(h);
      if (to_parse.compare(first, header.size(), header) == 0) {
        has_header = true;
        break;
      }
    }
  }
  if (!has_header) to_parse = "Translated Task: " + to_parse;
  try {
    const ThreePart parts = parse_three_part(to_parse);
    d.task = parts.task;
    d.context = parts.context;
    d.constraints = parts.constraints;
  } catch (const std::exception&) {
    d.flagged = true;
  }
  return d;
}

json StageStats::to_json() const {
  return json{{"stage", stage},   {"input", input},     {"kept", kept},
              {"dropped", dropped}, {"flagged", flagged}, {"retry", retry},
              {"retention", retention()}};
}

namespace {

StageStats stats_from_json(const json& j) {
  StageStats s;
  s.stage = j.at("stage").get<std::string>();
  s.input = j.at("input").get<long>();
  s.kept = j.at("kept").get<long>();
  s.dropped = j.at("dropped").get<long>();
  s.flagged = j.at("flagged").get<long>();
  s.retry = j.at("retry").get<long>();
  return s;
}

std::string checkpoint_prefix(const std::string& dir, size_t index, StageKind stage) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02zu", index);
  return (fs::path(dir) / (std::string(buf) + "_" + to_string(stage))).string();
}

std::vector<ConvRecord> load_checkpoint_records(const std::string& path) {
  std::vector<ConvRecord> out;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(conv_record_from_json(json::parse(line)));
  }
  return out;
}

}  // namespace

DataprepResult run_dataprep(const std::vector<ConvRecord>& input, const DataprepConfig& cfg) {
  const std::vector<StageKind> stages =
      cfg.stages.empty() ? default_stage_order() : cfg.stages;
  const bool checkpointing = !cfg.checkpoint_dir.empty();
  if (checkpointing) fs::create_directories(cfg.checkpoint_dir);

  DataprepResult result;
  std::vector<ConvRecord> current = input;
  for (size_t i = 0; i < stages.size(); ++i) {
    const StageKind stage = stages[i];
    const std::string prefix =
        checkpointing ? checkpoint_prefix(cfg.checkpoint_dir, i, stage) : "";
    const std::string records_path = prefix + ".jsonl";
    const std::string stats_path = prefix + ".stats.json";
    if (checkpointing && fs::exists(records_path) && fs::exists(stats_path)) {
      current = load_checkpoint_records(records_path);
      result.stats.push_back(stats_from_json(json::parse(read_file(stats_path))));
      continue;
    }
    StageOutcome outcome = filter_stage(current, stage, cfg.deps);
    StageStats stats;
    stats.stage = to_string(stage);
    stats.input = static_cast<long>(current.size());
    stats.kept = static_cast<long>(outcome.kept.size());
    stats.dropped = static_cast<long>(outcome.dropped.size());
    stats.flagged = static_cast<long>(outcome.flagged.size());
    stats.retry = static_cast<long>(outcome.retry.size());
    result.stats.push_back(stats);
    current = std::move(outcome.kept);
    if (stats.retry > 0) {
      // Backend failures leave the stage incomplete: no checkpoint is written,
      // so a rerun re-executes this stage from its input.
      result.incomplete_stage = to_string(stage);
      break;
    }
    if (checkpointing) {
      std::ostringstream body;
      for (const auto& r : current) body << conv_record_to_json(r).dump() << "\n";
      write_file_atomic(records_path, body.str());
      write_file_atomic(stats_path, stats.to_json().dump(2) + "\n");
    }
  }
  result.survivors = std::move(current);
  return result;
}

std::vector<StageStats> pipeline_stats(const std::string& checkpoint_dir) {
  std::vector<std::string> files;
  if (fs::exists(checkpoint_dir)) {
    for (const auto& entry : fs::directory_iterator(checkpoint_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.size() > 11 && name.substr(name.size() - 11) == ".stats.json") {
        files.push_back(entry.path().string());
      }
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<StageStats> out;
  for (const auto& f : files) out.push_back(stats_from_json(json::parse(read_file(f))));
  return out;
}

ExportDatasetResult export_dataset(const std::vector<ConvRecord>& records, TextBackend& backend,
                                   const PromptRegistry& prompts, const std::string& out_path,
                                   const std::string& review_path) {
  ExportDatasetResult result;
  std::ostringstream body;
  std::ostringstream review;
  for (const auto& r : records) {
    const Decomposed d = decompose_instruction(r, backend, prompts);
    if (d.flagged) {
      ++result.flagged;
      review << json{{"id", r.id},
                     {"instruction", r.user_text()},
                     {"raw_output", d.raw_output}}
                    .dump()
             << "\n";
      continue;
    }
    json constraints = json::array();
    for (const auto& c : d.constraints) constraints.push_back(c);
    json row{{"id", r.id},
             {"instruction", r.user_text()},
             {"task", d.task},
             {"constraints", constraints}};
    if (!d.context.empty()) row["context"] = d.context;
    body << row.dump() << "\n";
    ++result.written;
  }
  write_file_atomic(out_path, body.str());
  if (!review_path.empty()) write_file_atomic(review_path, review.str());
  return result;
}

}  // namespace decrim
