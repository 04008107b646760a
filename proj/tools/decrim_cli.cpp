#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "decrim/backend.hpp"
#include "decrim/core.hpp"
#include "decrim/dataprep.hpp"
#include "decrim/evaljudge.hpp"
#include "decrim/metrics.hpp"
#include "decrim/oqa.hpp"
#include "decrim/pipeline.hpp"
#include "decrim/prompts.hpp"

namespace fs = std::filesystem;
using namespace decrim;

namespace {

// ---------------------------------------------------------------------------
// Config file: one JSON document describing backends, cache, prices, and run
// defaults; per-command flags override it.
//
// {
//   "backends": {
//     "generator":  {"type": "mock", "model_id": "mock", "default_reply": "...",
//                    "script": ["..."], "latency_ms": 0,
//                    "rules": [{"needle": "...", "replies": ["..."], "repeat_last": true}]},
//     "critic":     {"type": "http", "base_url": "http://127.0.0.1:8080",
//                    "model_id": "m", "api_key_env": "API_KEY"}
//   },
//   "prompts_dir": "prompts",
//   "cache": {"dir": ".decrim_cache", "cache_unseeded_sampling": false},
//   "prices": {"m": {"input_usd_per_1m": 10.0, "output_usd_per_1m": 30.0}},
//   "parallelism": 4,
//   "rate_limit": {"capacity": 2.0, "refill_per_sec": 1.0},
//   "seed": 7,
//   "max_output_tokens": 1024
// }
// ---------------------------------------------------------------------------
struct CliConfig {
  json raw = json::object();
  std::string prompts_dir = "prompts";
  std::optional<CacheOptions> cache;
  std::optional<PriceTable> prices;
  int parallelism = 1;
  std::optional<long> seed;
  int max_output_tokens = 1024;
  std::shared_ptr<TokenBucket> limiter;
};

CliConfig load_config(const std::string& path) {
  CliConfig cfg;
  if (path.empty()) return cfg;
  cfg.raw = json::parse(read_file(path));
  if (cfg.raw.contains("prompts_dir")) cfg.prompts_dir = cfg.raw["prompts_dir"].get<std::string>();
  if (cfg.raw.contains("cache")) {
    CacheOptions c;
    c.dir = cfg.raw["cache"].at("dir").get<std::string>();
    c.cache_unseeded_sampling = cfg.raw["cache"].value("cache_unseeded_sampling", false);
    cfg.cache = c;
  }
  if (cfg.raw.contains("prices")) cfg.prices = PriceTable::from_json(cfg.raw["prices"]);
  if (cfg.raw.contains("parallelism")) cfg.parallelism = cfg.raw["parallelism"].get<int>();
  if (cfg.raw.contains("seed")) cfg.seed = cfg.raw["seed"].get<long>();
  if (cfg.raw.contains("max_output_tokens")) {
    cfg.max_output_tokens = cfg.raw["max_output_tokens"].get<int>();
  }
  if (cfg.raw.contains("rate_limit")) {
    const json& r = cfg.raw["rate_limit"];
    cfg.limiter = std::make_shared<TokenBucket>(r.at("capacity").get<double>(),
                                                r.at("refill_per_sec").get<double>());
  }
  return cfg;
}

std::shared_ptr<TextBackend> build_backend(const json& spec, const CliConfig& cfg) {
  const std::string type = spec.value("type", "mock");
  std::shared_ptr<TextBackend> backend;
  if (type == "mock") {
    MockOptions opt;
    opt.model_id = spec.value("model_id", "mock");
    opt.latency_ms = spec.value("latency_ms", 0L);
    auto mock = std::make_shared<MockBackend>(opt);
    if (spec.contains("default_reply")) {
      mock->set_default_reply(spec["default_reply"].get<std::string>());
    }
    if (spec.contains("script")) {
      mock->enqueue_all(spec["script"].get<std::vector<std::string>>());
    }
    if (spec.contains("rules")) {
      for (const json& r : spec["rules"]) {
        mock->add_rule(r.at("needle").get<std::string>(),
                       r.at("replies").get<std::vector<std::string>>(),
                       r.value("repeat_last", false));
      }
    }
    backend = mock;
  } else if (type == "http") {
    HttpBackendOptions opt;
    opt.base_url = spec.at("base_url").get<std::string>();
    opt.model_id = spec.value("model_id", "default");
    opt.path = spec.value("path", opt.path);
    opt.api_key_env = spec.value("api_key_env", "");
    opt.max_attempts = spec.value("max_attempts", opt.max_attempts);
    opt.initial_backoff_ms = spec.value("initial_backoff_ms", opt.initial_backoff_ms);
    opt.backoff_multiplier = spec.value("backoff_multiplier", opt.backoff_multiplier);
    opt.max_backoff_ms = spec.value("max_backoff_ms", opt.max_backoff_ms);
    opt.jitter = spec.value("jitter", opt.jitter);
    opt.jitter_seed = spec.value("jitter_seed", opt.jitter_seed);
    opt.timeout_sec = spec.value("timeout_sec", opt.timeout_sec);
    opt.limiter = cfg.limiter;
    backend = std::make_shared<HttpBackend>(opt);
  } else {
    throw std::invalid_argument("unknown backend type \"" + type + "\"");
  }
  if (cfg.cache) backend = std::make_shared<CachingBackend>(backend, *cfg.cache);
  return backend;
}

// Resolves a backend role ("generator", "critic", "decomposer", "judge",
// "classifier"); every role falls back to the generator definition.
std::shared_ptr<TextBackend> backend_for(const CliConfig& cfg, const std::string& role,
                                         bool required) {
  if (cfg.raw.contains("backends")) {
    const json& b = cfg.raw["backends"];
    if (b.contains(role)) return build_backend(b[role], cfg);
    if (b.contains("generator")) return build_backend(b["generator"], cfg);
  }
  if (required) {
    throw std::invalid_argument("config must define backends." + role +
                                " (or backends.generator) for this command");
  }
  return nullptr;
}

Strategy parse_strategy_flag(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "gnr") return Strategy::generate_and_rank;
  return strategy_from_string(s);
}

JudgeStrategy parse_judge_flag(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "rule") return JudgeStrategy::rule_based;
  return judge_strategy_from_string(s);
}

Label parse_label_flag(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  return label_from_string(s);
}

std::string render_table(const std::vector<std::string>& headers,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> widths(headers.size());
  for (size_t c = 0; c < headers.size(); ++c) widths[c] = headers[c].size();
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size() && c < widths.size(); ++c) {
      widths[c] = std::max(widths[c], row[c].size());
    }
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (size_t c = 0; c < cells.size(); ++c) {
      out += cells[c];
      if (c + 1 < cells.size()) out += std::string(widths[c] - cells[c].size() + 2, ' ');
    }
    return out + "\n";
  };
  std::string out = line(headers);
  std::vector<std::string> rule;
  for (size_t w : widths) rule.push_back(std::string(w, '-'));
  out += line(rule);
  for (const auto& row : rows) out += line(row);
  return out;
}

std::string one_decimal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

double mean_trace_seconds(const std::vector<RunTrace>& traces) {
  if (traces.empty()) return 0.0;
  double total_ms = 0.0;
  for (const auto& t : traces) {
    for (const auto& it : t.iterations) total_ms += static_cast<double>(it.wall_time_ms);
  }
  return total_ms / 1000.0 / static_cast<double>(traces.size());
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------
struct RunOpts {
  std::string config_path;
  std::string dataset;
  std::string format = "custom";
  std::string strategy = "decrim";
  std::string judge = "icl-const-cot";
  std::string decomposer = "self";
  std::string eval_judge = "rule";
  bool no_eval = false;
  int n_max = 10;
  int at_n = -1;  // <0 = unset
  int parallelism = 0;  // 0 = config value
  long seed = -1;       // <0 = unset
  double temperature = -1.0;  // <0 = greedy
  std::string out_dir = "run_out";
  long max_failures = 0;
};

int cmd_run(const RunOpts& o) {
  const CliConfig cfg = load_config(o.config_path);
  const auto instructions = load_dataset(o.dataset, source_from_string(o.format));
  const PromptRegistry reg = PromptRegistry::load_dir(cfg.prompts_dir);

  PipelineConfig pc;
  pc.max_refinements = o.n_max;
  pc.max_output_tokens = cfg.max_output_tokens;
  pc.prompts = &reg;
  pc.generator = backend_for(cfg, "generator", true);
  pc.decomposer = o.decomposer == "oracle" ? DecomposerKind::oracle : DecomposerKind::self;
  const JudgeStrategy critic_strategy = parse_judge_flag(o.judge);
  if (critic_strategy == JudgeStrategy::rule_based) {
    pc.critic = CriticKind::rule_based;
  } else {
    pc.critic_strategy = critic_strategy;
    const bool has_critic_backend =
        cfg.raw.contains("backends") && cfg.raw["backends"].contains("critic");
    pc.critic = has_critic_backend ? CriticKind::supervised_backend : CriticKind::self;
    if (has_critic_backend) pc.critic_backend = backend_for(cfg, "critic", true);
  }
  if (cfg.raw.contains("backends") && cfg.raw["backends"].contains("decomposer")) {
    pc.decomposer_backend = backend_for(cfg, "decomposer", true);
  }
  if (o.temperature >= 0.0) {
    pc.decoding.mode = DecodingParams::Mode::sampling;
    pc.decoding.temperature = o.temperature;
  }
  if (o.seed >= 0) {
    pc.decoding.seed = o.seed;
  } else if (cfg.seed) {
    pc.decoding.seed = *cfg.seed;
  }

  const Strategy strategy = parse_strategy_flag(o.strategy);
  const int parallelism = o.parallelism > 0 ? o.parallelism : std::max(cfg.parallelism, 1);
  DatasetRunResult result = run_dataset(instructions, strategy, pc, parallelism);

  fs::create_directories(o.out_dir);
  const std::optional<int> at_n = o.at_n >= 0 ? std::optional<int>(o.at_n) : std::nullopt;

  json report_json;
  std::string table;
  if (!o.no_eval) {
    JudgeConfig jc;
    jc.strategy = parse_judge_flag(o.eval_judge);
    if (jc.strategy != JudgeStrategy::rule_based) {
      jc.backend = backend_for(cfg, "judge", true);
      jc.prompts = &reg;
    }
    evaluate_traces(result.traces, instructions, jc);
    const EvalReport rep = accuracy_report(result.traces, at_n);
    report_json = rep.to_json();
    report_json["strategy"] = to_string(strategy);
    if (at_n) report_json["at_n"] = *at_n;
    table = render_table(
        {"Strategy", "Best N", "Instr Acc", "Constr Acc", "Instructions", "Time (s)"},
        {{to_string(strategy), std::to_string(at_n.value_or(pc.max_refinements)),
          format_pct(rep.instruction_accuracy), format_pct(rep.constraint_accuracy),
          std::to_string(rep.instructions), one_decimal(mean_trace_seconds(result.traces))}});
  }

  save_traces(result.traces, (fs::path(o.out_dir) / "traces.jsonl").string());
  if (!report_json.is_null()) {
    json failures = json::array();
    for (const auto& f : result.failures) {
      failures.push_back(json{{"instruction_id", f.instruction_id}, {"error", f.error}});
    }
    report_json["failures"] = failures;
    write_file_atomic((fs::path(o.out_dir) / "report.json").string(),
                      report_json.dump(2) + "\n");
  }
  json manifest{{"command", "run"},
                {"dataset", o.dataset},
                {"format", o.format},
                {"strategy", to_string(strategy)},
                {"judge", o.judge},
                {"decomposer", o.decomposer},
                {"n_max", o.n_max},
                {"parallelism", parallelism},
                {"prompts_dir", cfg.prompts_dir},
                {"generator_model", pc.generator->model_id()},
                {"traces", static_cast<long>(result.traces.size())},
                {"failures", static_cast<long>(result.failures.size())}};
  if (at_n) manifest["at_n"] = *at_n;
  if (pc.decoding.seed) manifest["seed"] = *pc.decoding.seed;
  if (!o.config_path.empty()) manifest["config"] = o.config_path;
  write_file_atomic((fs::path(o.out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");

  if (!table.empty()) std::cout << table;
  std::cout << "traces written: " << result.traces.size() << "\n";
  for (const auto& f : result.failures) {
    std::cout << "failed: " << f.instruction_id << ": " << f.error << "\n";
  }
  return static_cast<long>(result.failures.size()) > o.max_failures ? 1 : 0;
}

// ---------------------------------------------------------------------------
// judge-eval
// ---------------------------------------------------------------------------
struct JudgeEvalOpts {
  std::string config_path;
  std::string samples;
  std::string strategy;
  std::string baseline;
  std::string tie_rule = "satisfied";
  std::string out_path;
};

int cmd_judge_eval(const JudgeEvalOpts& o) {
  if (o.strategy.empty() == o.baseline.empty()) {
    throw CLI::ValidationError("judge-eval", "pass exactly one of --strategy / --baseline");
  }
  const CliConfig cfg = load_config(o.config_path);
  const auto samples = load_judge_samples(o.samples);
  const std::optional<Label> tie_rule = parse_label_flag(o.tie_rule);

  JudgeReliabilityReport rep;
  std::string label;
  std::optional<PromptRegistry> reg;
  if (!o.baseline.empty()) {
    BaselineKind kind;
    if (o.baseline == "all-satisfied") kind = BaselineKind::all_satisfied;
    else if (o.baseline == "all-not-satisfied") kind = BaselineKind::all_not_satisfied;
    else if (o.baseline == "majority") kind = BaselineKind::majority_vote;
    else throw CLI::ValidationError("judge-eval", "unknown baseline \"" + o.baseline + "\"");
    label = o.baseline;
    rep = evaluate_baseline(kind, samples, tie_rule);
  } else {
    JudgeConfig jc;
    jc.strategy = parse_judge_flag(o.strategy);
    if (jc.strategy != JudgeStrategy::rule_based) {
      jc.backend = backend_for(cfg, "judge", true);
      reg = PromptRegistry::load_dir(cfg.prompts_dir);
      jc.prompts = &*reg;
    }
    label = o.strategy;
    rep = evaluate_judge(samples, jc, cfg.prices ? &*cfg.prices : nullptr, tie_rule);
  }

  char kappa[32] = "-";
  if (rep.kappa_vs_majority) std::snprintf(kappa, sizeof(kappa), "%.3f", *rep.kappa_vs_majority);
  std::cout << render_table(
      {"Judge", "Macro F1", "F1 Not Foll.", "F1 Foll.", "Kappa", "Cost", "Samples", "Failures",
       "Unparseable"},
      {{label, format_pct(rep.macro_f1), format_pct(rep.f1_negative), format_pct(rep.f1_positive),
        kappa, rep.cost_usd ? format_usd(*rep.cost_usd) : "-", std::to_string(rep.samples),
        std::to_string(rep.failures), std::to_string(rep.unparseable)}});
  if (!o.out_path.empty()) {
    json j = rep.to_json();
    j["judge"] = label;
    write_file_atomic(o.out_path, j.dump(2) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// oqa
// ---------------------------------------------------------------------------
struct OqaOpts {
  std::string config_path;
  std::string traces;
  std::string dataset;
  std::string format = "custom";
  std::string out_path;
};

int cmd_oqa(const OqaOpts& o) {
  const CliConfig cfg = load_config(o.config_path);
  const auto traces = load_traces(o.traces);
  const auto instructions = load_dataset(o.dataset, source_from_string(o.format));
  std::map<std::string, std::string> texts;
  for (const auto& ins : instructions) texts[ins.id] = ins.raw_text;
  const auto backend = backend_for(cfg, "judge", true);
  const PromptRegistry reg = PromptRegistry::load_dir(cfg.prompts_dir);
  const OqaReport rep = oqa_report(traces, texts, *backend, reg);

  if (rep.empty_denominator) {
    std::cout << "no revised traces to compare\n";
  } else {
    std::cout << render_table(
        {"Win %", "Lose %", "Tie %", "Revised", "Total"},
        {{format_pct(rep.win_pct / 100.0), format_pct(rep.lose_pct / 100.0),
          format_pct(rep.tie_pct / 100.0), std::to_string(rep.revised),
          std::to_string(rep.total)}});
  }
  if (!o.out_path.empty()) write_file_atomic(o.out_path, rep.to_json().dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// dataprep
// ---------------------------------------------------------------------------
struct DataprepOpts {
  std::string config_path;
  std::string input;
  std::string checkpoint_dir;
  bool resume = false;
  std::string out_path;
  std::string review_out;
  std::string flagged_out;
};

int cmd_dataprep(const DataprepOpts& o) {
  const CliConfig cfg = load_config(o.config_path);
  if (!o.resume && !o.checkpoint_dir.empty() && fs::exists(o.checkpoint_dir) &&
      !fs::is_empty(o.checkpoint_dir)) {
    throw std::runtime_error("checkpoint dir " + o.checkpoint_dir +
                             " is not empty; pass --resume to continue or clear it");
  }
  const auto input = load_conversations(o.input);
  const PromptRegistry reg = PromptRegistry::load_dir(cfg.prompts_dir);
  DataprepConfig dc;
  dc.checkpoint_dir = o.checkpoint_dir;
  dc.deps.classifier = backend_for(cfg, "classifier", true);
  dc.deps.prompts = &reg;
  dc.deps.review_path = o.review_out;
  const DataprepResult result = run_dataprep(input, dc);

  std::vector<std::vector<std::string>> rows;
  for (const auto& s : result.stats) {
    rows.push_back({s.stage, std::to_string(s.input), std::to_string(s.kept),
                    std::to_string(s.dropped), std::to_string(s.flagged),
                    std::to_string(s.retry), format_pct(s.retention())});
  }
  std::cout << render_table(
      {"Stage", "Input", "Kept", "Dropped", "Flagged", "Retry", "Retention %"}, rows);
  if (result.incomplete_stage) {
    std::cout << "incomplete stage: " << *result.incomplete_stage
              << " (rerun with --resume after fixing the backend)\n";
    return 1;
  }
  std::cout << "survivors: " << result.survivors.size() << "\n";
  if (!o.out_path.empty()) {
    const auto decomposer = backend_for(cfg, "decomposer", true);
    const ExportDatasetResult exp =
        export_dataset(result.survivors, *decomposer, reg, o.out_path, o.flagged_out);
    std::cout << "dataset rows: " << exp.written << "\nflagged for review: " << exp.flagged
              << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------
struct ReportOpts {
  std::vector<std::string> trace_paths;
  std::vector<std::string> oqa_paths;  // positional pairing with trace_paths
  int at_n = -1;
  std::string out_path;
};

int cmd_report(const ReportOpts& o) {
  const std::optional<int> at_n = o.at_n >= 0 ? std::optional<int>(o.at_n) : std::nullopt;
  std::vector<std::vector<std::string>> rows;
  json out = json::array();
  for (size_t i = 0; i < o.trace_paths.size(); ++i) {
    const auto traces = load_traces(o.trace_paths[i]);
    const EvalReport rep = accuracy_report(traces, at_n);
    int best_n = at_n.value_or(0);
    if (!at_n) {
      for (const auto& t : traces) best_n = std::max(best_n, t.refinement_count());
    }
    std::string win = "-", lose = "-";
    json oqa_json;
    if (i < o.oqa_paths.size()) {
      oqa_json = json::parse(read_file(o.oqa_paths[i]));
      win = format_pct(oqa_json.at("win_pct").get<double>() / 100.0);
      lose = format_pct(oqa_json.at("lose_pct").get<double>() / 100.0);
    }
    const std::string strategy =
        traces.empty() ? "-" : to_string(traces.front().strategy);
    rows.push_back({fs::path(o.trace_paths[i]).filename().string(), strategy,
                    std::to_string(best_n), format_pct(rep.instruction_accuracy),
                    format_pct(rep.constraint_accuracy), win, lose,
                    one_decimal(mean_trace_seconds(traces))});
    json row = rep.to_json();
    row["traces"] = o.trace_paths[i];
    row["strategy"] = strategy;
    row["best_n"] = best_n;
    if (!oqa_json.is_null()) {
      row["oqa_win_pct"] = oqa_json["win_pct"];
      row["oqa_lose_pct"] = oqa_json["lose_pct"];
    }
    out.push_back(row);
  }
  std::cout << render_table({"Traces", "Strategy", "Best N", "Instr Acc", "Constr Acc",
                             "OQA Win", "OQA Lose", "Time (s)"},
                            rows);
  if (!o.out_path.empty()) write_file_atomic(o.out_path, out.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// cache
// ---------------------------------------------------------------------------
int cmd_cache(const std::string& config_path, const std::string& dir_flag, bool clear) {
  const CliConfig cfg = load_config(config_path);
  std::string dir = dir_flag;
  if (dir.empty() && cfg.cache) dir = cfg.cache->dir;
  if (dir.empty()) {
    throw CLI::ValidationError("cache", "pass --dir or set cache.dir in the config");
  }
  CachingBackend cache(std::make_shared<MockBackend>(), CacheOptions{dir, false});
  if (clear) {
    std::cout << "removed " << cache.clear() << " entries\n";
  } else {
    const auto entries = cache.list_entries();
    for (const auto& e : entries) std::cout << e << "\n";
    std::cout << entries.size() << " entries\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-constraint self-correction pipelines, judges, and reports"};
  app.require_subcommand(1);
  int rc = 0;

  RunOpts run_opts;
  CLI::App* run = app.add_subcommand("run", "Run a strategy over a dataset; write traces + report");
  run->add_option("--config", run_opts.config_path, "JSON config file");
  run->add_option("--dataset", run_opts.dataset, "instruction JSONL")->required();
  run->add_option("--format", run_opts.format, "dataset format")
      ->check(CLI::IsMember({"realinstruct", "ifeval", "custom"}));
  run->add_option("--strategy", run_opts.strategy, "generation strategy")
      ->check(CLI::IsMember({"conventional", "make-sure", "self-refine", "decrim", "gnr"}));
  run->add_option("--judge", run_opts.judge, "in-loop critic")
      ->check(CLI::IsMember({"icl-inst", "icl-const", "icl-const-cot", "rule"}));
  run->add_option("--decomposer", run_opts.decomposer, "constraint decomposer")
      ->check(CLI::IsMember({"self", "oracle"}));
  run->add_option("--eval-judge", run_opts.eval_judge, "post-run evaluation judge")
      ->check(CLI::IsMember({"icl-inst", "icl-const", "icl-const-cot", "rule"}));
  run->add_flag("--no-eval", run_opts.no_eval, "skip post-run evaluation and report");
  run->add_option("--n-max", run_opts.n_max, "refinement budget")->check(CLI::Range(0, 1000));
  run->add_option("--at-n", run_opts.at_n, "report as if stopped after N refinements");
  run->add_option("--parallelism", run_opts.parallelism, "worker count (0 = config)");
  run->add_option("--seed", run_opts.seed, "sampling seed");
  run->add_option("--temperature", run_opts.temperature, "sampling temperature (unset = greedy)");
  run->add_option("--out", run_opts.out_dir, "output directory");
  run->add_option("--max-failures", run_opts.max_failures,
                  "per-record failures tolerated before exit 1");
  run->callback([&] { rc = cmd_run(run_opts); });

  JudgeEvalOpts je_opts;
  CLI::App* je = app.add_subcommand("judge-eval", "Score a judge or baseline against gold labels");
  je->add_option("--config", je_opts.config_path, "JSON config file");
  je->add_option("--samples", je_opts.samples, "judge samples JSONL")->required();
  je->add_option("--strategy", je_opts.strategy, "judge strategy")
      ->check(CLI::IsMember({"icl-inst", "icl-const", "icl-const-cot", "rule"}));
  je->add_option("--baseline", je_opts.baseline, "constant/majority baseline")
      ->check(CLI::IsMember({"all-satisfied", "all-not-satisfied", "majority"}));
  je->add_option("--tie-rule", je_opts.tie_rule, "majority tie resolution")
      ->check(CLI::IsMember({"satisfied", "not-satisfied"}));
  je->add_option("--out", je_opts.out_path, "write the report JSON here");
  je->callback([&] { rc = cmd_judge_eval(je_opts); });

  OqaOpts oqa_opts;
  CLI::App* oqa = app.add_subcommand("oqa", "Pairwise initial-vs-final quality over revised traces");
  oqa->add_option("--config", oqa_opts.config_path, "JSON config file");
  oqa->add_option("--traces", oqa_opts.traces, "trace JSONL")->required();
  oqa->add_option("--dataset", oqa_opts.dataset, "instruction JSONL")->required();
  oqa->add_option("--format", oqa_opts.format, "dataset format")
      ->check(CLI::IsMember({"realinstruct", "ifeval", "custom"}));
  oqa->add_option("--out", oqa_opts.out_path, "write the report JSON here");
  oqa->callback([&] { rc = cmd_oqa(oqa_opts); });

  DataprepOpts dp_opts;
  CLI::App* dp = app.add_subcommand("dataprep", "Filter conversations into a constrained dataset");
  dp->add_option("--config", dp_opts.config_path, "JSON config file");
  dp->add_option("--input", dp_opts.input, "conversations JSONL")->required();
  dp->add_option("--checkpoint-dir", dp_opts.checkpoint_dir, "stage checkpoint directory");
  dp->add_flag("--resume", dp_opts.resume, "continue from existing checkpoints");
  dp->add_option("--out", dp_opts.out_path, "decompose survivors into this dataset JSONL");
  dp->add_option("--review-out", dp_opts.review_out, "survivor review export path");
  dp->add_option("--flagged-out", dp_opts.flagged_out, "failed decompositions go here");
  dp->callback([&] { rc = cmd_dataprep(dp_opts); });

  ReportOpts rep_opts;
  CLI::App* rep = app.add_subcommand("report", "Render trace files into an aligned table");
  rep->add_option("--traces", rep_opts.trace_paths, "trace JSONL (repeatable)")->required();
  rep->add_option("--oqa", rep_opts.oqa_paths, "oqa report JSON, paired by position");
  rep->add_option("--at-n", rep_opts.at_n, "report as if stopped after N refinements");
  rep->add_option("--out", rep_opts.out_path, "write rows as JSON here");
  rep->callback([&] { rc = cmd_report(rep_opts); });

  std::string cache_config, cache_dir;
  CLI::App* cache = app.add_subcommand("cache", "Inspect or clear the response cache");
  cache->require_subcommand(1);
  CLI::App* cache_list = cache->add_subcommand("list", "list cache entries");
  CLI::App* cache_clear = cache->add_subcommand("clear", "delete every cache entry");
  for (CLI::App* sub : {cache_list, cache_clear}) {
    sub->add_option("--config", cache_config, "JSON config file");
    sub->add_option("--dir", cache_dir, "cache directory");
  }
  cache_list->callback([&] { rc = cmd_cache(cache_config, cache_dir, false); });
  cache_clear->callback([&] { rc = cmd_cache(cache_config, cache_dir, true); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
