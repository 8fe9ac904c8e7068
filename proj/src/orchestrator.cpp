#include "akd/orchestrator.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "akd/error.hpp"
#include "akd/jsonl.hpp"

namespace akd {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::kImitation: return "imitation";
    case Phase::kTraining: return "training";
    case Phase::kDiscrimination: return "discrimination";
    case Phase::kGeneration: return "generation";
    case Phase::kFinalImitation: return "final-imitation";
    case Phase::kFinalTraining: return "final-training";
    case Phase::kDone: return "done";
  }
  return "?";
}

void to_json(json& j, const IterationSummary& s) {
  j = {{"iteration", s.iteration},
       {"train_size", s.train_size},
       {"cache_size", s.cache_size},
       {"trained_records", s.trained_records},
       {"dropped", s.dropped},
       {"dataset_path", s.dataset_path},
       {"training_dataset_path", s.training_dataset_path},
       {"scores_path", s.scores_path},
       {"report_path", s.report_path},
       {"student_checkpoint", s.student_checkpoint},
       {"hard", s.hard},
       {"easy", s.easy},
       {"unscored", s.unscored},
       {"accepted_hard", s.accepted_hard},
       {"accepted_easy", s.accepted_easy},
       {"attempts", s.attempts},
       {"budget_exhausted", s.budget_exhausted},
       {"equilibrium", s.equilibrium}};
}

void from_json(const json& j, IterationSummary& s) {
  j.at("iteration").get_to(s.iteration);
  j.at("train_size").get_to(s.train_size);
  j.at("cache_size").get_to(s.cache_size);
  j.at("trained_records").get_to(s.trained_records);
  j.at("dropped").get_to(s.dropped);
  j.at("dataset_path").get_to(s.dataset_path);
  j.at("training_dataset_path").get_to(s.training_dataset_path);
  j.at("scores_path").get_to(s.scores_path);
  j.at("report_path").get_to(s.report_path);
  j.at("student_checkpoint").get_to(s.student_checkpoint);
  j.at("hard").get_to(s.hard);
  j.at("easy").get_to(s.easy);
  j.at("unscored").get_to(s.unscored);
  j.at("accepted_hard").get_to(s.accepted_hard);
  j.at("accepted_easy").get_to(s.accepted_easy);
  j.at("attempts").get_to(s.attempts);
  j.at("budget_exhausted").get_to(s.budget_exhausted);
  j.at("equilibrium").get_to(s.equilibrium);
}

void to_json(json& j, const FinalReport& r) {
  j = {{"iterations_completed", r.iterations_completed},
       {"seed_count", r.seed_count},
       {"cumulative_trained_count", r.cumulative_trained_count},
       {"train_size", r.train_size},
       {"cache_size", r.cache_size},
       {"student_checkpoint", r.student_checkpoint},
       {"history", r.history},
       {"datasets", r.datasets},
       {"equilibrium_iterations", r.equilibrium_iterations}};
}

void to_json(json& j, const RunPlan& p) {
  json its = json::array();
  for (const auto& it : p.iterations) {
    its.push_back({{"iteration", it.iteration},
                   {"train_size", it.train_size},
                   {"cache_size", it.cache_size},
                   {"target_hard", it.target_hard},
                   {"target_easy", it.target_easy},
                   {"cumulative_trained_count", it.cumulative_trained_count}});
  }
  j = {{"seed_count", p.seed_count},
       {"iterations", its},
       {"final_train_size", p.final_train_size},
       {"final_cache_size", p.final_cache_size},
       {"cumulative_trained_count", p.cumulative_trained_count},
       {"min_calls",
        {{"teacher", p.teacher_calls},
         {"student", p.student_calls},
         {"referee", p.referee_calls},
         {"generator", p.generator_calls}}},
       {"trainer_invocations", p.trainer_invocations}};
}

namespace {

std::string serialize_rng(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

std::mt19937_64 deserialize_rng(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream in(text);
  in >> rng;
  if (in.fail()) throw StateError("corrupt rng state");
  return rng;
}

std::string train_file(int k) { return fmt::format("pools/train-{}.jsonl", k); }
std::string cache_file(int k) { return fmt::format("pools/cache-{}.jsonl", k); }
std::string teacher_cache_file(const IterationState& s) {
  return fmt::format("pools/teacher_cache-{}-{}.jsonl", s.iteration, phase_name(s.phase));
}

void save_teacher_cache(const fs::path& path, const TeacherCache& cache) {
  std::vector<json> rows;
  rows.reserve(cache.size());
  for (const auto& [id, response] : cache) rows.push_back({{"id", id}, {"response", response}});
  write_jsonl(path, rows);
}

TeacherCache load_teacher_cache(const fs::path& path) {
  TeacherCache cache;
  for (const auto& row : read_jsonl(path)) {
    cache.emplace(row.at("id").get<std::string>(), row.at("response").get<std::string>());
  }
  return cache;
}

}  // namespace

IterationState initial_state(std::span<const Instruction> seeds, const Config& config) {
  IterationState s;
  s.pools = pool_init(seeds);
  s.student_checkpoint = config.student_initial_checkpoint;
  s.seed_count = seeds.size();
  s.cumulative_trained_count = seeds.size();
  s.rng_state = serialize_rng(std::mt19937_64(config.seed));
  return s;
}

bool has_checkpoint(const fs::path& dir) { return fs::exists(dir / "state.meta"); }

void checkpoint_save(const IterationState& state, const fs::path& dir) {
  fs::create_directories(dir / "pools");
  save_pool(dir / train_file(state.iteration), state.pools.train_pool);
  save_pool(dir / cache_file(state.iteration), state.pools.cache_pool);
  const std::string tc_file = teacher_cache_file(state);
  save_teacher_cache(dir / tc_file, state.teacher_cache);

  const json meta = {{"schema_version", kStateSchemaVersion},
                     {"iteration", state.iteration},
                     {"phase", state.phase},
                     {"student_checkpoint", state.student_checkpoint},
                     {"seed_count", state.seed_count},
                     {"cumulative_trained_count", state.cumulative_trained_count},
                     {"rng_state", state.rng_state},
                     {"history", state.history},
                     {"current", state.current},
                     {"trained_datasets", state.trained_datasets},
                     {"train_pool_file", train_file(state.iteration)},
                     {"cache_pool_file", cache_file(state.iteration)},
                     {"teacher_cache_file", tc_file}};
  write_file_atomic(dir / "state.meta", meta.dump(2) + "\n");

  // Only the file the committed meta names is live.
  for (const auto& entry : fs::directory_iterator(dir / "pools")) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("teacher_cache-") && "pools/" + name != tc_file) fs::remove(entry.path());
  }
}

IterationState checkpoint_load(const fs::path& dir) {
  const fs::path meta_path = dir / "state.meta";
  if (!fs::exists(meta_path)) throw StateError("no checkpoint in " + dir.string());
  const json meta = json::parse(read_file(meta_path), nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) {
    throw StateError("corrupt checkpoint: " + meta_path.string());
  }
  if (meta.value("schema_version", -1) != kStateSchemaVersion) {
    throw StateError(fmt::format("checkpoint schema version {} is not supported (expected {})",
                                 meta.value("schema_version", json(nullptr)).dump(),
                                 kStateSchemaVersion));
  }
  IterationState s;
  try {
    meta.at("iteration").get_to(s.iteration);
    meta.at("phase").get_to(s.phase);
    meta.at("student_checkpoint").get_to(s.student_checkpoint);
    meta.at("seed_count").get_to(s.seed_count);
    meta.at("cumulative_trained_count").get_to(s.cumulative_trained_count);
    meta.at("rng_state").get_to(s.rng_state);
    meta.at("history").get_to(s.history);
    meta.at("current").get_to(s.current);
    meta.at("trained_datasets").get_to(s.trained_datasets);
    for (const char* key : {"train_pool_file", "cache_pool_file", "teacher_cache_file"}) {
      if (!fs::exists(dir / meta.at(key).get<std::string>())) {
        throw StateError("checkpoint references missing file " + meta.at(key).get<std::string>());
      }
    }
    s.pools.train_pool = load_pool(dir / meta.at("train_pool_file").get<std::string>());
    s.pools.cache_pool = load_pool(dir / meta.at("cache_pool_file").get<std::string>());
    s.teacher_cache = load_teacher_cache(dir / meta.at("teacher_cache_file").get<std::string>());
  } catch (const StateError&) {
    throw;
  } catch (const std::exception& e) {
    throw StateError("corrupt checkpoint " + meta_path.string() + ": " + e.what());
  }
  deserialize_rng(s.rng_state);
  return s;
}

// ---------------------------------------------------------------------------
// Lock

StateLock::StateLock(const fs::path& dir) : path_(dir / "state.lock") {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) {
      throw StateError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    std::ifstream in(path_);
    long owner = 0;
    in >> owner;
    if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM)) {
      throw StateError(
          fmt::format("state directory {} is in use by process {}", dir.string(), owner));
    }
    spdlog::warn("removing stale lock left by process {}", owner);
    fs::remove(path_);
  }
  throw StateError("cannot acquire lock " + path_.string());
}

StateLock::~StateLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Stages

namespace {

void mark(const RunContext& ctx, std::string entry) {
  if (ctx.hooks.log) ctx.hooks.log->record(std::move(entry));
}

std::string train_with_hook(const RunContext& ctx, const TrainerCall& call) {
  mark(ctx, "trainer");
  if (ctx.hooks.trainer) return ctx.hooks.trainer(call, ctx.config.trainer);
  return invoke_trainer(call, ctx.config.trainer);
}

// Dataset handed to the trainer for `dataset_rel`, building the cumulative
// concatenation when configured.
std::string training_dataset(const RunContext& ctx, const IterationState& s,
                             const std::string& dataset_rel, const std::string& tag) {
  if (ctx.config.training_mode == TrainingMode::kIncremental) return dataset_rel;
  std::string content;
  for (const auto& h : s.history) content += read_file(ctx.state_dir / h.dataset_path);
  if (s.phase == Phase::kFinalTraining) {
    content += read_file(ctx.state_dir / dataset_rel);
  } else {
    content += read_file(ctx.state_dir / s.current.dataset_path);
  }
  const std::string rel = "datasets/cumulative-" + tag + ".jsonl";
  write_file_atomic(ctx.state_dir / rel, content);
  return rel;
}

std::string run_training(const RunContext& ctx, IterationState& s, const std::string& dataset_rel,
                         const std::string& tag, int iteration) {
  const std::string train_rel = training_dataset(ctx, s, dataset_rel, tag);
  TrainerCall call;
  call.dataset_path = ctx.state_dir / train_rel;
  call.prev_checkpoint = s.student_checkpoint;
  call.passthrough_path = ctx.state_dir / "trainer/passthrough.json";
  call.iteration = iteration;
  call.working_dir = ctx.config.base_dir;
  const std::string ckpt = train_with_hook(ctx, call);
  spdlog::info("student checkpoint: {} -> {}", s.student_checkpoint, ckpt);
  s.student_checkpoint = ckpt;
  ctx.backends.at(Role::kStudent).set_model(ckpt);
  s.trained_datasets.push_back(train_rel);
  return train_rel;
}

FinalReport make_final_report(const IterationState& s) {
  FinalReport r;
  r.iterations_completed = s.iteration;
  r.seed_count = s.seed_count;
  r.cumulative_trained_count = s.cumulative_trained_count;
  r.train_size = s.pools.train_pool.size();
  r.cache_size = s.pools.cache_pool.size();
  r.student_checkpoint = s.student_checkpoint;
  r.history = s.history;
  r.datasets = s.trained_datasets;
  for (const auto& h : s.history) {
    if (h.equilibrium) r.equilibrium_iterations.push_back(h.iteration);
  }
  return r;
}

void write_final_report(const fs::path& dir, const FinalReport& r) {
  fs::create_directories(dir / "reports");
  write_file_atomic(dir / "reports/final.json", json(r).dump(2) + "\n");
}

}  // namespace

IterationState advance(IterationState s, const RunContext& ctx) {
  const Config& cfg = ctx.config;
  const StageOptions opts = StageOptions::from_config(cfg, ctx.prompts);
  TeacherCache* cache = cfg.cache_teacher_responses ? &s.teacher_cache : nullptr;
  const int k = s.iteration + 1;
  const Phase completed = s.phase;
  mark(ctx, fmt::format("stage:{}:{}", phase_name(s.phase), k));

  switch (s.phase) {
    case Phase::kImitation: {
      s.current = IterationSummary{};
      s.current.iteration = k;
      s.current.train_size = s.pools.train_pool.size();
      s.current.cache_size = s.pools.cache_pool.size();
      const auto ds = imitate(s.pools.train_pool, ctx.backends.at(Role::kTeacher), opts, k, cache);
      s.current.dataset_path = fmt::format("datasets/iter-{}.jsonl", k);
      save_dataset(ctx.state_dir / s.current.dataset_path, ds);
      s.current.trained_records = ds.records.size();
      s.current.dropped = ds.dropped;
      s.phase = Phase::kTraining;
      break;
    }
    case Phase::kTraining: {
      s.current.training_dataset_path =
          run_training(ctx, s, s.current.dataset_path, std::to_string(k), k);
      s.current.student_checkpoint = s.student_checkpoint;
      s.phase = Phase::kDiscrimination;
      break;
    }
    case Phase::kDiscrimination: {
      const auto report =
          discriminate(s.pools.cache_pool, ctx.backends.at(Role::kTeacher),
                       ctx.backends.at(Role::kStudent), ctx.backends.at(Role::kReferee), cfg.tau,
                       opts, cache);
      s.current.scores_path = fmt::format("reports/iter-{}.scores.json", k);
      fs::create_directories(ctx.state_dir / "reports");
      write_file_atomic(ctx.state_dir / s.current.scores_path, json(report).dump(2) + "\n");
      s.current.hard = report.hard_ids.size();
      s.current.easy = report.easy_ids.size();
      s.current.unscored = report.unscored_ids.size();
      spdlog::info("iteration {}: {} hard, {} easy, {} unscored of {}", k, s.current.hard,
                   s.current.easy, s.current.unscored, s.pools.cache_pool.size());
      s.phase = Phase::kGeneration;
      break;
    }
    case Phase::kGeneration: {
      DiscriminationReport report =
          json::parse(read_file(ctx.state_dir / s.current.scores_path)).get<DiscriminationReport>();
      std::vector<ScoredInstruction> hard, easy;
      split_sources(s.pools.cache_pool, report, hard, easy);
      GenerationRequest req;
      req.n_total = cfg.n_per_iteration;
      req.ratio_hard = cfg.ratio_hard;
      req.ratio_easy = cfg.ratio_easy;
      req.rouge_threshold = cfg.rouge_threshold;
      req.attempt_budget_factor = cfg.attempt_budget_factor;
      req.iteration = k;
      auto rng = deserialize_rng(s.rng_state);
      const auto gen = generate_batch(hard, easy, ctx.backends.at(Role::kGenerator), req,
                                      s.pools.cache_pool, rng, opts);
      if (gen.accepted.empty()) {
        throw StageError(fmt::format("iteration {}: generation accepted no instructions", k));
      }
      s.rng_state = serialize_rng(rng);

      s.current.accepted_hard = gen.accepted_hard;
      s.current.accepted_easy = gen.accepted_easy;
      s.current.attempts = gen.attempts_hard + gen.attempts_easy;
      s.current.budget_exhausted = gen.budget_exhausted;
      s.current.equilibrium =
          gen.equilibrium || s.current.hard <= static_cast<std::size_t>(cfg.equilibrium_floor);
      if (s.current.equilibrium) spdlog::info("iteration {}: equilibrium signal", k);
      s.current.report_path = fmt::format("reports/iter-{}.json", k);
      const json iter_report = {{"iteration", k}, {"summary", s.current}, {"generation", gen}};
      write_file_atomic(ctx.state_dir / s.current.report_path, iter_report.dump(2) + "\n");

      s.pools = pool_enrich(pool_rejuvenate(s.pools, gen.accepted), gen.accepted);
      s.cumulative_trained_count += gen.accepted.size();
      s.history.push_back(s.current);
      s.current = IterationSummary{};
      s.iteration = k;
      if (k < cfg.iterations) {
        s.phase = Phase::kImitation;
      } else {
        s.phase = cfg.final_imitation ? Phase::kFinalImitation : Phase::kDone;
      }
      break;
    }
    case Phase::kFinalImitation: {
      const auto ds = imitate(s.pools.train_pool, ctx.backends.at(Role::kTeacher), opts,
                              s.iteration + 1, cache);
      save_dataset(ctx.state_dir / "datasets/final.jsonl", ds);
      s.phase = Phase::kFinalTraining;
      break;
    }
    case Phase::kFinalTraining: {
      run_training(ctx, s, "datasets/final.jsonl", "final", s.iteration + 1);
      s.phase = Phase::kDone;
      break;
    }
    case Phase::kDone:
      throw PreconditionError("the run is already complete");
  }

  if (s.phase == Phase::kDone) write_final_report(ctx.state_dir, make_final_report(s));
  checkpoint_save(s, ctx.state_dir);
  if (ctx.hooks.after_stage) ctx.hooks.after_stage(completed, s);
  return s;
}

IterationState run_iteration(IterationState state, const RunContext& ctx) {
  if (state.iteration >= ctx.config.iterations) {
    throw PreconditionError(fmt::format("iteration {} is at the configured limit of {}",
                                        state.iteration, ctx.config.iterations));
  }
  if (state.phase > Phase::kGeneration) {
    throw PreconditionError("run_iteration called in phase " + std::string(phase_name(state.phase)));
  }
  const int start = state.iteration;
  while (state.iteration == start) state = advance(std::move(state), ctx);
  return state;
}

namespace {

void write_config_snapshot(const Config& config, const fs::path& dir) {
  const json snap = {{"base_dir", fs::absolute(config.base_dir).string()},
                     {"config", config_to_json(config)}};
  write_file_atomic(dir / "config.json", snap.dump(2) + "\n");
  fs::create_directories(dir / "trainer");
  write_file_atomic(dir / "trainer/passthrough.json", config.trainer.passthrough.dump(2) + "\n");
}

FinalReport drive(IterationState state, const RunContext& ctx) {
  ctx.backends.at(Role::kStudent).set_model(state.student_checkpoint);
  while (state.phase != Phase::kDone) state = advance(std::move(state), ctx);
  return make_final_report(state);
}

}  // namespace

FinalReport run(const Config& config, const BackendSet& backends, const fs::path& state_dir,
                const RunHooks& hooks) {
  if (config.iterations < 1) throw ConfigError({"iterations: must be >= 1"});
  StateLock lock(state_dir);
  if (has_checkpoint(state_dir)) {
    throw StateError("state directory " + state_dir.string() +
                     " already holds a run; use resume");
  }
  const auto seeds = load_seeds(config.resolve(config.seed_file));
  spdlog::info("loaded {} seed instructions", seeds.size());
  write_config_snapshot(config, state_dir);

  const PromptSet prompts = config.templates_dir.empty()
                                ? PromptSet::builtin()
                                : PromptSet::with_overrides(config.resolve(config.templates_dir));
  const RunContext ctx{config, backends, state_dir, prompts, hooks};
  IterationState state = initial_state(seeds, config);
  checkpoint_save(state, state_dir);
  return drive(std::move(state), ctx);
}

FinalReport run(const Config& config, const fs::path& state_dir, const RunHooks& hooks) {
  const BackendSet backends = make_backends(config, hooks.log);
  return run(config, backends, state_dir, hooks);
}

Config load_state_config(const fs::path& state_dir) {
  const fs::path path = state_dir / "config.json";
  if (!fs::exists(path)) throw StateError("no config snapshot in " + state_dir.string());
  const json snap = json::parse(read_file(path), nullptr, false);
  if (snap.is_discarded() || !snap.contains("config") || !snap.contains("base_dir")) {
    throw StateError("corrupt config snapshot: " + path.string());
  }
  return parse_config(snap["config"], {}, snap["base_dir"].get<std::string>(),
                      ConfigPurpose::kStage);
}

FinalReport resume(const fs::path& state_dir, const BackendSet& backends, const RunHooks& hooks) {
  if (!fs::is_directory(state_dir)) throw StateError("no state directory " + state_dir.string());
  if (!has_checkpoint(state_dir)) throw StateError("no checkpoint in " + state_dir.string());
  StateLock lock(state_dir);
  const Config config = load_state_config(state_dir);
  IterationState state = checkpoint_load(state_dir);
  if (state.phase == Phase::kDone) {
    spdlog::info("run in {} is already complete", state_dir.string());
    FinalReport r = make_final_report(state);
    r.was_already_complete = true;
    return r;
  }
  spdlog::info("resuming at iteration {}, phase {}", state.iteration + 1, phase_name(state.phase));
  const PromptSet prompts = config.templates_dir.empty()
                                ? PromptSet::builtin()
                                : PromptSet::with_overrides(config.resolve(config.templates_dir));
  const RunContext ctx{config, backends, state_dir, prompts, hooks};
  return drive(std::move(state), ctx);
}

FinalReport resume(const fs::path& state_dir, const RunHooks& hooks) {
  if (!has_checkpoint(state_dir)) throw StateError("no checkpoint in " + state_dir.string());
  const Config config = load_state_config(state_dir);
  const BackendSet backends = make_backends(config, hooks.log);
  return resume(state_dir, backends, hooks);
}

RunPlan plan_run(std::size_t seed_count, const Config& config) {
  if (seed_count == 0) throw PreconditionError("plan needs at least one seed");
  RunPlan p;
  p.seed_count = seed_count;
  const auto [target_hard, target_easy] =
      generation_targets(config.n_per_iteration, config.ratio_hard, config.ratio_easy);
  const auto n = static_cast<std::size_t>(config.n_per_iteration);
  std::size_t train = seed_count;
  std::size_t cache = seed_count;
  for (int k = 1; k <= config.iterations; ++k) {
    PlannedIteration it;
    it.iteration = k;
    it.train_size = train;
    it.cache_size = cache;
    it.target_hard = target_hard;
    it.target_easy = target_easy;
    // Every cache entry passed through an earlier or the current imitation,
    // so with caching discrimination needs no teacher calls.
    p.teacher_calls += train + (config.cache_teacher_responses ? 0 : cache);
    p.student_calls += cache;
    p.referee_calls += 2 * cache;
    p.generator_calls += n;
    ++p.trainer_invocations;
    train = n;
    cache += n;
    it.cumulative_trained_count = cache;
    p.iterations.push_back(it);
  }
  if (config.final_imitation) {
    p.teacher_calls += train;
    ++p.trainer_invocations;
  }
  p.final_train_size = train;
  p.final_cache_size = cache;
  p.cumulative_trained_count = cache;
  return p;
}

}  // namespace akd
