#pragma once

// The iteration loop: imitation -> training -> discrimination -> generation,
// repeated for the configured number of iterations, with the whole state
// persisted at every stage boundary so an interrupted run can be resumed.
//
// State directory:
//   state.meta                       commit point, written last
//   config.json                      config snapshot used by resume
//   pools/train-K.jsonl, cache-K.jsonl   pools after K completed iterations
//   pools/teacher_cache-*.jsonl      teacher responses (one live file)
//   datasets/iter-K.jsonl            imitation output of iteration K
//   datasets/final.jsonl             imitation output for the last batch
//   reports/iter-K.scores.json       discrimination report
//   reports/iter-K.json              iteration summary and generation audit
//   reports/final.json               FinalReport
//   trainer/passthrough.json         trainer.passthrough, handed to the hook
//   state.lock                       held by the owning process

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "akd/config.hpp"
#include "akd/core.hpp"
#include "akd/stages.hpp"
#include "akd/trainer.hpp"

namespace akd {

// The next stage to execute.
enum class Phase {
  kImitation,
  kTraining,
  kDiscrimination,
  kGeneration,
  kFinalImitation,
  kFinalTraining,
  kDone,
};

NLOHMANN_JSON_SERIALIZE_ENUM(Phase, {
                                        {Phase::kImitation, "imitation"},
                                        {Phase::kTraining, "training"},
                                        {Phase::kDiscrimination, "discrimination"},
                                        {Phase::kGeneration, "generation"},
                                        {Phase::kFinalImitation, "final-imitation"},
                                        {Phase::kFinalTraining, "final-training"},
                                        {Phase::kDone, "done"},
                                    })

std::string_view phase_name(Phase phase);

struct IterationSummary {
  int iteration = 0;
  std::size_t train_size = 0;  // pool sizes when the iteration started
  std::size_t cache_size = 0;
  std::size_t trained_records = 0;
  std::size_t dropped = 0;
  std::string dataset_path;           // relative to the state dir
  std::string training_dataset_path;  // what the trainer received
  std::string scores_path;
  std::string report_path;
  std::string student_checkpoint;  // after this iteration's training
  std::size_t hard = 0;
  std::size_t easy = 0;
  std::size_t unscored = 0;
  int accepted_hard = 0;
  int accepted_easy = 0;
  int attempts = 0;
  bool budget_exhausted = false;
  bool equilibrium = false;

  friend bool operator==(const IterationSummary&, const IterationSummary&) = default;
};

void to_json(nlohmann::json& j, const IterationSummary& s);
void from_json(const nlohmann::json& j, IterationSummary& s);

struct IterationState {
  int iteration = 0;  // completed iterations
  Phase phase = Phase::kImitation;
  PoolState pools;
  std::string student_checkpoint;
  std::size_t seed_count = 0;
  // |seed| + accepted instructions over completed iterations.
  std::size_t cumulative_trained_count = 0;
  std::string rng_state;  // std::mt19937_64 stream form
  std::vector<IterationSummary> history;
  IterationSummary current;  // the iteration in progress
  std::vector<std::string> trained_datasets;  // relative paths, training order
  TeacherCache teacher_cache;

  friend bool operator==(const IterationState&, const IterationState&) = default;
};

// Fresh state over the seed pool.
IterationState initial_state(std::span<const Instruction> seeds, const Config& config);

inline constexpr int kStateSchemaVersion = 1;

// Writes pools, the teacher cache and finally state.meta into `dir`.
// load(save(s)) == s.
void checkpoint_save(const IterationState& state, const std::filesystem::path& dir);
// Throws StateError when state.meta is missing, corrupt or of another schema
// version, or a file it references is missing.
IterationState checkpoint_load(const std::filesystem::path& dir);

bool has_checkpoint(const std::filesystem::path& dir);

struct FinalReport {
  int iterations_completed = 0;
  std::size_t seed_count = 0;
  std::size_t cumulative_trained_count = 0;
  std::size_t train_size = 0;
  std::size_t cache_size = 0;
  std::string student_checkpoint;
  std::vector<IterationSummary> history;
  std::vector<std::string> datasets;  // training order, relative to the state dir
  std::vector<int> equilibrium_iterations;

  bool was_already_complete = false;  // resume found nothing to do; not serialized
};

void to_json(nlohmann::json& j, const FinalReport& r);

struct RunHooks {
  // Called after each stage boundary is committed; throwing aborts the run
  // with the committed state intact.
  std::function<void(Phase completed, const IterationState&)> after_stage;
  // Replaces the configured trainer hook.
  std::function<std::string(const TrainerCall&, const TrainerHookSpec&)> trainer;
  // Receives "stage:<phase>:<iteration>" markers and "trainer" entries.
  std::shared_ptr<CallLog> log;
};

struct RunContext {
  const Config& config;
  const BackendSet& backends;
  std::filesystem::path state_dir;
  const PromptSet& prompts;
  RunHooks hooks;
};

// Executes the next phase and commits. Precondition: phase != kDone.
IterationState advance(IterationState state, const RunContext& ctx);

// Runs the remaining phases of the current iteration. Precondition:
// state.iteration < config.iterations.
IterationState run_iteration(IterationState state, const RunContext& ctx);

// Starts a run in `state_dir`, which must not already hold one. Seeds are
// read from config.seed_file.
FinalReport run(const Config& config, const std::filesystem::path& state_dir,
                const RunHooks& hooks = {});
FinalReport run(const Config& config, const BackendSet& backends,
                const std::filesystem::path& state_dir, const RunHooks& hooks = {});

// Continues from the last committed stage boundary using the config
// snapshot in `state_dir`.
FinalReport resume(const std::filesystem::path& state_dir, const RunHooks& hooks = {});
FinalReport resume(const std::filesystem::path& state_dir, const BackendSet& backends,
                   const RunHooks& hooks = {});

Config load_state_config(const std::filesystem::path& state_dir);

// Exclusive ownership of a state directory. A lock left behind by a process
// that no longer exists is taken over.
class StateLock {
 public:
  explicit StateLock(const std::filesystem::path& dir);
  ~StateLock();
  StateLock(const StateLock&) = delete;
  StateLock& operator=(const StateLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Pool sizes and request counts a run would produce, without any calls.
struct PlannedIteration {
  int iteration = 0;
  std::size_t train_size = 0;
  std::size_t cache_size = 0;  // scored in this iteration's discrimination
  int target_hard = 0;
  int target_easy = 0;
  std::size_t cumulative_trained_count = 0;  // after this iteration
};

struct RunPlan {
  std::size_t seed_count = 0;
  std::vector<PlannedIteration> iterations;
  std::size_t final_train_size = 0;
  std::size_t final_cache_size = 0;
  std::size_t cumulative_trained_count = 0;
  // Lower bounds: generation may need more attempts, referee parsing retries.
  std::size_t teacher_calls = 0;
  std::size_t student_calls = 0;
  std::size_t referee_calls = 0;
  std::size_t generator_calls = 0;
  int trainer_invocations = 0;
};

void to_json(nlohmann::json& j, const RunPlan& p);

RunPlan plan_run(std::size_t seed_count, const Config& config);

}  // namespace akd
