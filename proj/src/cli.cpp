#include "akd/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "akd/config.hpp"
#include "akd/error.hpp"
#include "akd/evalkit.hpp"
#include "akd/jsonl.hpp"
#include "akd/orchestrator.hpp"
#include "akd/stages.hpp"

namespace akd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::string state_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  bool json_output = false;
  bool verbose = false;

  std::string pool_path;
  std::string scores_path;
  std::string items_path;
  std::string out_path;
  std::string setting = "setting2";
  std::optional<int> evidence_k;
  std::string model_role = "student";
  std::string inspect_what;
  std::optional<int> inspect_iteration;
};

std::vector<std::string> all_overrides(const Options& o) {
  auto v = o.overrides;
  if (o.seed) v.push_back("seed=" + std::to_string(*o.seed));
  return v;
}

PromptSet prompts_for(const Config& c) {
  return c.templates_dir.empty() ? PromptSet::builtin()
                                 : PromptSet::with_overrides(c.resolve(c.templates_dir));
}

void emit(const Options& o, std::ostream& out, const json& doc, const std::string& human) {
  if (!o.out_path.empty()) {
    write_file_atomic(o.out_path, doc.dump(2) + "\n");
    spdlog::info("wrote {}", o.out_path);
  }
  if (o.json_output) {
    out << doc.dump(2) << "\n";
  } else {
    out << human;
  }
}

// ---------------------------------------------------------------------------

int cmd_run(const Options& o, std::ostream& out) {
  const Config config = load_config(o.config_path, all_overrides(o), ConfigPurpose::kLoop);
  if (o.dry_run) {
    const auto seeds = load_seeds(config.resolve(config.seed_file));
    const auto plan = plan_run(seeds.size(), config);
    const auto prompts = prompts_for(config);
    const auto& sample = seeds.front().text;
    const auto response = prompts.render_response(sample);
    const auto referee = prompts.render_referee(sample, "<teacher answer>", "<student answer>");
    const auto hard = prompts.render_hard_gen(sample);
    const auto easy = prompts.render_easy_gen(sample);
    json doc = {{"plan", plan},
                {"prompts",
                 {{"teacher_response", response.user_text},
                  {"referee_compare", {{"system", referee.system_text}, {"user", referee.user_text}}},
                  {"gen_hard", hard.user_text},
                  {"gen_easy", easy.user_text}}}};
    std::string human = fmt::format("dry run: {} seeds, {} iterations of {}\n", plan.seed_count,
                                    plan.iterations.size(), config.n_per_iteration);
    for (const auto& it : plan.iterations) {
      human += fmt::format("  iteration {}: train {}, cache {}, generate {} hard + {} easy, "
                           "cumulative {}\n",
                           it.iteration, it.train_size, it.cache_size, it.target_hard,
                           it.target_easy, it.cumulative_trained_count);
    }
    human += fmt::format("cumulative trained instructions: {}\n", plan.cumulative_trained_count);
    human += fmt::format("minimum calls: teacher {}, student {}, referee {}, generator {}; "
                         "trainer runs {}\n",
                         plan.teacher_calls, plan.student_calls, plan.referee_calls,
                         plan.generator_calls, plan.trainer_invocations);
    human += "\n--- teacher_response (user) ---\n" + response.user_text +
             "\n--- referee_compare (user) ---\n" + referee.user_text +
             "\n--- gen_hard (user) ---\n" + hard.user_text + "\n--- gen_easy (user) ---\n" +
             easy.user_text + "\n";
    emit(o, out, doc, human);
    return 0;
  }
  const auto report = run(config, o.state_dir);
  const auto path = fs::path(o.state_dir) / "reports/final.json";
  emit(o, out, json(report),
       fmt::format("run complete: {} iterations, cumulative {} instructions, student {}\n"
                   "report: {}\n",
                   report.iterations_completed, report.cumulative_trained_count,
                   report.student_checkpoint, path.string()));
  return 0;
}

int cmd_resume(const Options& o, std::ostream& out) {
  const auto report = resume(o.state_dir);
  const auto path = fs::path(o.state_dir) / "reports/final.json";
  std::string human;
  if (report.was_already_complete) {
    human = "run already complete; nothing to do\n";
  } else {
    human = fmt::format("run complete: {} iterations, cumulative {} instructions, student {}\n",
                        report.iterations_completed, report.cumulative_trained_count,
                        report.student_checkpoint);
  }
  emit(o, out, json(report), human + "report: " + path.string() + "\n");
  return 0;
}

int cmd_discriminate(const Options& o, std::ostream& out) {
  const Config config = load_config(o.config_path, all_overrides(o));
  const auto pool = load_seeds(config.resolve(o.pool_path));
  const auto backends = make_backends(config);
  const auto prompts = prompts_for(config);
  const auto opts = StageOptions::from_config(config, prompts);
  const auto report = discriminate(pool, backends.at(Role::kTeacher), backends.at(Role::kStudent),
                                   backends.at(Role::kReferee), config.tau, opts);
  emit(o, out, json(report),
       fmt::format("{} instructions: {} hard, {} easy, {} unscored (tau {})\n", pool.size(),
                   report.hard_ids.size(), report.easy_ids.size(), report.unscored_ids.size(),
                   config.tau));
  return 0;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const Config config = load_config(o.config_path, all_overrides(o));
  const auto pool = load_seeds(config.resolve(o.pool_path));
  const auto report = json::parse(read_file(config.resolve(o.scores_path)))
                          .get<DiscriminationReport>();
  std::vector<ScoredInstruction> hard, easy;
  split_sources(pool, report, hard, easy);
  const auto backends = make_backends(config);
  const auto prompts = prompts_for(config);
  GenerationRequest req;
  req.n_total = config.n_per_iteration;
  req.ratio_hard = config.ratio_hard;
  req.ratio_easy = config.ratio_easy;
  req.rouge_threshold = config.rouge_threshold;
  req.attempt_budget_factor = config.attempt_budget_factor;
  std::mt19937_64 rng(config.seed);
  const auto result = generate_batch(hard, easy, backends.at(Role::kGenerator), req, pool, rng,
                                     StageOptions::from_config(config, prompts));
  emit(o, out, json(result),
       fmt::format("accepted {}/{} hard, {}/{} easy in {} attempts{}\n", result.accepted_hard,
                   result.target_hard, result.accepted_easy, result.target_easy,
                   result.attempts_hard + result.attempts_easy,
                   result.budget_exhausted ? " (budget exhausted)" : ""));
  return 0;
}

int cmd_eval_mcq(const Options& o, std::ostream& out) {
  const Config config = load_config(o.config_path, all_overrides(o));
  const auto items = load_mcq_items(config.resolve(o.items_path));
  const Role role = parse_role(o.model_role);
  const auto backends = make_backends(config);
  const auto report = eval_mcq(backends.at(role), items, config.profile(role), config.concurrency,
                               prompts_for(config));
  emit(o, out, json(report), format_accuracy_table(report));
  return 0;
}

int cmd_eval_pairwise(const Options& o, std::ostream& out) {
  const Config config = load_config(o.config_path, all_overrides(o));
  const auto questions = load_pairwise_questions(config.resolve(o.items_path));
  const auto backends = make_backends(config);
  const auto prompts = prompts_for(config);
  PairwiseOptions opts;
  opts.setting = parse_pairwise_setting(o.setting);
  opts.evidence_k = o.evidence_k.value_or(config.pairwise_evidence_k);
  opts.concurrency = config.concurrency;
  opts.parse_retries = config.referee_parse_retries;
  opts.parse_mode = config.strict_referee_parse ? ParseMode::kStrict : ParseMode::kTolerant;
  opts.prompts = &prompts;
  opts.candidate = config.profile(Role::kStudent);
  opts.reference = config.profile(Role::kTeacher);
  opts.rater = config.profile(Role::kRater);
  const auto report = eval_pairwise(backends.at(Role::kStudent), backends.at(Role::kTeacher),
                                    backends.at(Role::kRater), questions, opts);
  emit(o, out, json(report), format_relative_quality(report));
  return 0;
}

// ---------------------------------------------------------------------------

json origin_counts(const std::vector<Instruction>& pool) {
  std::map<std::string, std::size_t> counts;
  for (const auto& ins : pool) counts[json(ins.origin).get<std::string>()]++;
  return counts;
}

int inspect_pools(const Options& o, const IterationState& s, std::ostream& out) {
  json rows = json::array();
  std::string human = fmt::format("{:>9}  {:>9}  {:>9}\n", "iteration", "train", "cache");
  for (const auto& h : s.history) {
    rows.push_back({{"iteration", h.iteration}, {"train", h.train_size}, {"cache", h.cache_size}});
    human += fmt::format("{:>9}  {:>9}  {:>9}\n", h.iteration, h.train_size, h.cache_size);
  }
  human += fmt::format("{:>9}  {:>9}  {:>9}  (current)\n", s.iteration, s.pools.train_pool.size(),
                       s.pools.cache_pool.size());
  const json doc = {{"iteration", s.iteration},
                    {"phase", s.phase},
                    {"train_size", s.pools.train_pool.size()},
                    {"cache_size", s.pools.cache_pool.size()},
                    {"cumulative_trained_count", s.cumulative_trained_count},
                    {"cache_origins", origin_counts(s.pools.cache_pool)},
                    {"at_iteration_start", rows}};
  human += fmt::format("cumulative trained: {}; cache origins: {}\n", s.cumulative_trained_count,
                       doc["cache_origins"].dump());
  emit(o, out, doc, human);
  return 0;
}

int inspect_history(const Options& o, const IterationState& s, std::ostream& out) {
  std::string human = fmt::format(
      "phase {} after {} completed iterations; cumulative {}; student {}\n", phase_name(s.phase),
      s.iteration, s.cumulative_trained_count, s.student_checkpoint);
  human += fmt::format("{:>4} {:>7} {:>7} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8}  {}\n", "iter",
                       "train", "cache", "hard", "easy", "unscored", "acc_hard", "acc_easy",
                       "attempts", "checkpoint");
  for (const auto& h : s.history) {
    human += fmt::format("{:>4} {:>7} {:>7} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8}  {}{}\n",
                         h.iteration, h.train_size, h.cache_size, h.hard, h.easy, h.unscored,
                         h.accepted_hard, h.accepted_easy, h.attempts, h.student_checkpoint,
                         h.equilibrium ? "  equilibrium" : "");
  }
  const json doc = {{"iteration", s.iteration},
                    {"phase", s.phase},
                    {"cumulative_trained_count", s.cumulative_trained_count},
                    {"student_checkpoint", s.student_checkpoint},
                    {"history", s.history}};
  emit(o, out, doc, human);
  return 0;
}

int inspect_scores(const Options& o, const IterationState& s, std::ostream& out) {
  // Latest iteration with a discrimination report, including the one in
  // progress.
  std::string rel;
  int iteration = 0;
  if (o.inspect_iteration) {
    iteration = *o.inspect_iteration;
    rel = fmt::format("reports/iter-{}.scores.json", iteration);
  } else if (!s.current.scores_path.empty()) {
    iteration = s.current.iteration;
    rel = s.current.scores_path;
  } else if (!s.history.empty()) {
    iteration = s.history.back().iteration;
    rel = s.history.back().scores_path;
  }
  const fs::path path = fs::path(o.state_dir) / rel;
  if (rel.empty() || !fs::exists(path)) {
    throw StateError("no discrimination report" +
                     (iteration ? fmt::format(" for iteration {}", iteration) : std::string()));
  }
  const auto report = json::parse(read_file(path)).get<DiscriminationReport>();
  std::vector<double> ds;
  json rows = json::array();
  std::string human = fmt::format("iteration {} (tau {})\n", iteration, report.tau_used);
  for (const auto& r : report.records) {
    const json label = r.label;
    rows.push_back({{"id", r.instruction_id},
                    {"d", r.label == Label::kUnscored ? json() : json(r.d)},
                    {"label", label}});
    if (r.label == Label::kUnscored) {
      human += fmt::format("  {:<16} {:>7}  unscored\n", r.instruction_id, "-");
    } else {
      ds.push_back(r.d);
      human += fmt::format("  {:<16} {:>7.3f}  {}\n", r.instruction_id, r.d,
                           label.get<std::string>());
    }
  }
  json summary = {{"scored", ds.size()},
                  {"hard", report.hard_ids.size()},
                  {"easy", report.easy_ids.size()},
                  {"unscored", report.unscored_ids.size()}};
  if (!ds.empty()) {
    std::sort(ds.begin(), ds.end());
    double sum = 0.0;
    for (double d : ds) sum += d;
    const double median = ds.size() % 2 ? ds[ds.size() / 2]
                                        : 0.5 * (ds[ds.size() / 2 - 1] + ds[ds.size() / 2]);
    summary["min"] = ds.front();
    summary["max"] = ds.back();
    summary["mean"] = sum / static_cast<double>(ds.size());
    summary["median"] = median;
    human += fmt::format("d: min {:.3f}, median {:.3f}, mean {:.3f}, max {:.3f}\n", ds.front(),
                         median, sum / static_cast<double>(ds.size()), ds.back());
  }
  human += fmt::format("{} hard, {} easy, {} unscored\n", report.hard_ids.size(),
                       report.easy_ids.size(), report.unscored_ids.size());
  emit(o, out, {{"iteration", iteration}, {"tau", report.tau_used}, {"summary", summary},
                {"records", rows}},
       human);
  return 0;
}

int cmd_inspect(const Options& o, std::ostream& out) {
  if (!fs::is_directory(o.state_dir) || !has_checkpoint(o.state_dir)) {
    throw StateError("no run state in " + o.state_dir);
  }
  const auto state = checkpoint_load(o.state_dir);
  if (o.inspect_what == "pools") return inspect_pools(o, state, out);
  if (o.inspect_what == "history") return inspect_history(o, state, out);
  return inspect_scores(o, state, out);
}

// ---------------------------------------------------------------------------

const char* error_kind(ExitCode code) {
  switch (code) {
    case ExitCode::kOk: return "ok";
    case ExitCode::kUsage: return "usage";
    case ExitCode::kConfig: return "config";
    case ExitCode::kState: return "state";
    case ExitCode::kBackend: return "backend";
    case ExitCode::kTrainer: return "trainer";
  }
  return "unknown";
}

int report_error(std::ostream& err, ExitCode code, const std::string& message,
                 const std::vector<std::string>& issues = {},
                 const std::string& captured_output = {}) {
  err << "akd: " << message << "\n";
  if (!captured_output.empty()) err << "--- trainer output ---\n" << captured_output << "\n";
  json e = {{"kind", error_kind(code)}, {"exit_code", static_cast<int>(code)}, {"message", message}};
  if (!issues.empty()) e["issues"] = issues;
  err << json{{"error", e}}.dump() << "\n";
  return static_cast<int>(code);
}

void configure_logging(bool verbose) {
  auto logger = spdlog::get("akd");
  if (!logger) {
    logger = spdlog::stderr_color_mt("akd");
    logger->set_pattern("[%l] %v");
  }
  spdlog::set_default_logger(logger);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Adversarial distillation loop: imitation, discrimination and generation over "
               "chat-completion backends."};
  app.require_subcommand(1);
  app.set_version_flag("--version", "akd 0.1.0");

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config_path, "Config file (JSON)")
                  ->check(CLI::ExistingFile);
    if (needs_config) c->required();
    sub->add_option("--set", o.overrides, "Override a config key: key.path=value (repeatable)")
        ->allow_extra_args(false);
    sub->add_option("--seed", o.seed, "Random seed (overrides the config's seed)");
    sub->add_flag("--json", o.json_output, "Print machine-readable JSON");
    sub->add_option("--out", o.out_path, "Also write the JSON result to this file");
    sub->add_flag("-v,--verbose", o.verbose, "Debug logging");
  };

  auto* run_cmd = app.add_subcommand("run", "Start a new run in --state-dir");
  add_common(run_cmd, true);
  run_cmd->add_option("--state-dir", o.state_dir, "Run state directory");
  run_cmd->add_flag("--dry-run", o.dry_run, "Render prompts and print the plan; no API calls");

  auto* resume_cmd = app.add_subcommand("resume", "Continue a run from its last stage boundary");
  resume_cmd->add_option("--state-dir", o.state_dir, "Run state directory")->required();
  resume_cmd->add_flag("--json", o.json_output, "Print machine-readable JSON");
  resume_cmd->add_flag("-v,--verbose", o.verbose, "Debug logging");

  auto* disc_cmd = app.add_subcommand("discriminate", "Score an instruction pool once");
  add_common(disc_cmd, true);
  disc_cmd->add_option("--pool", o.pool_path, "Instruction pool (JSONL)")->required();

  auto* gen_cmd = app.add_subcommand("generate", "Generate one batch from a scored pool");
  add_common(gen_cmd, true);
  gen_cmd->add_option("--pool", o.pool_path, "Instruction pool that was scored")->required();
  gen_cmd->add_option("--scores", o.scores_path, "Discrimination report (JSON)")->required();

  auto* mcq_cmd = app.add_subcommand("eval-mcq", "Zero-shot multiple-choice accuracy");
  add_common(mcq_cmd, true);
  mcq_cmd->add_option("--items", o.items_path, "Items (JSONL)")->required();
  mcq_cmd->add_option("--role", o.model_role, "Backend role to evaluate")
      ->check(CLI::IsMember({"student", "teacher", "referee", "generator", "rater"}));

  auto* pair_cmd = app.add_subcommand("eval-pairwise", "Relative response quality vs. teacher");
  add_common(pair_cmd, true);
  pair_cmd->add_option("--questions", o.items_path, "Questions (JSONL)")->required();
  pair_cmd->add_option("--setting", o.setting, "setting1 or setting2")
      ->check(CLI::IsMember({"setting1", "setting2"}));
  pair_cmd->add_option("--k", o.evidence_k, "Evidence samples per order (setting2)");

  auto* inspect_cmd = app.add_subcommand("inspect", "Show pools, scores or history of a run");
  inspect_cmd->add_option("what", o.inspect_what, "pools | scores | history")
      ->required()
      ->check(CLI::IsMember({"pools", "scores", "history"}));
  inspect_cmd->add_option("--state-dir", o.state_dir, "Run state directory")->required();
  inspect_cmd->add_option("--iteration", o.inspect_iteration, "Iteration for scores");
  inspect_cmd->add_flag("--json", o.json_output, "Print machine-readable JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }
  configure_logging(o.verbose);

  try {
    if (*run_cmd) {
      if (!o.dry_run && o.state_dir.empty()) {
        return report_error(err, ExitCode::kUsage, "run needs --state-dir (or --dry-run)");
      }
      return cmd_run(o, out);
    }
    if (*resume_cmd) return cmd_resume(o, out);
    if (*disc_cmd) return cmd_discriminate(o, out);
    if (*gen_cmd) return cmd_generate(o, out);
    if (*mcq_cmd) return cmd_eval_mcq(o, out);
    if (*pair_cmd) return cmd_eval_pairwise(o, out);
    if (*inspect_cmd) return cmd_inspect(o, out);
  } catch (const ConfigError& e) {
    return report_error(err, e.exit_code(), e.what(), e.issues());
  } catch (const TrainerError& e) {
    return report_error(err, e.exit_code(), e.what(), {}, e.captured_output());
  } catch (const Error& e) {
    return report_error(err, e.exit_code(), e.what());
  } catch (const json::exception& e) {
    return report_error(err, ExitCode::kState, std::string("malformed JSON: ") + e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(err, ExitCode::kState, e.what());
  }
  return static_cast<int>(ExitCode::kUsage);
}

}  // namespace akd::cli
