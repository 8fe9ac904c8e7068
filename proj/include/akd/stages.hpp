#pragma once

// The three per-iteration stages: imitation (teacher responses for the Train
// Pool), discrimination (referee scoring of teacher vs student over the Cache
// Pool) and generation (new instructions seeded from hard and easy ones).

#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "akd/backends.hpp"
#include "akd/config.hpp"
#include "akd/core.hpp"
#include "akd/prompts.hpp"

namespace akd {

struct StageOptions {
  const PromptSet* prompts = &PromptSet::builtin();
  int concurrency = 8;
  double max_drop_fraction = 0.1;
  double max_unscored_fraction = 0.1;
  int referee_parse_retries = 2;
  ParseMode parse_mode = ParseMode::kTolerant;
  RoleProfile teacher = role_profile(Role::kTeacher);
  RoleProfile student = role_profile(Role::kStudent);
  RoleProfile referee = role_profile(Role::kReferee);
  RoleProfile generator = role_profile(Role::kGenerator);

  static StageOptions from_config(const Config& config, const PromptSet& prompts);
};

// Teacher responses keyed by instruction id, reused across stages and
// iterations when caching is enabled.
using TeacherCache = std::map<std::string, std::string>;

struct TrainingRecord {
  std::string instruction_id;
  std::string instruction;
  std::string response;
};

struct TrainingDataset {
  std::vector<TrainingRecord> records;
  int iteration = 0;
  std::size_t source_pool_size = 0;
  std::size_t dropped = 0;
};

// One {instruction, response} object per line: the file the trainer reads.
void save_dataset(const std::filesystem::path& path, const TrainingDataset& dataset);
std::vector<TrainingRecord> load_dataset(const std::filesystem::path& path);

// Teacher response for every Train Pool instruction, in pool order. Failed
// completions are dropped; more than max_drop_fraction dropped is a
// StageError. Successful responses are written into `cache` when given.
TrainingDataset imitate(std::span<const Instruction> train_pool, ChatBackend& teacher,
                        const StageOptions& options, int iteration = 0,
                        TeacherCache* cache = nullptr);

// Two referee runs, the second with the answers' positions exchanged. Each
// model's score is the mean of its two positional scores. A run whose output
// cannot be parsed is re-queried up to referee_parse_retries times; if it
// still fails the record is unscored.
ScoreRecord score_instruction(const Instruction& instruction, std::string_view teacher_response,
                              std::string_view student_response, ChatBackend& referee, double tau,
                              const StageOptions& options);

struct DiscriminationReport {
  std::vector<ScoreRecord> records;  // cache-pool order
  std::vector<std::string> hard_ids;
  std::vector<std::string> easy_ids;
  std::vector<std::string> unscored_ids;
  double tau_used = 1.0;

  double hard_fraction() const;
  friend bool operator==(const DiscriminationReport&, const DiscriminationReport&) = default;
};

void to_json(nlohmann::json& j, const DiscriminationReport& r);
void from_json(const nlohmann::json& j, DiscriminationReport& r);

DiscriminationReport discriminate(std::span<const Instruction> cache_pool, ChatBackend& teacher,
                                  ChatBackend& student, ChatBackend& referee, double tau,
                                  const StageOptions& options, TeacherCache* cache = nullptr);

struct ScoredInstruction {
  Instruction instruction;
  double d = 0.0;
};

// Splits the cache pool into hard and easy sources using a report; unscored
// instructions belong to neither.
void split_sources(std::span<const Instruction> cache_pool, const DiscriminationReport& report,
                   std::vector<ScoredInstruction>& hard, std::vector<ScoredInstruction>& easy);

struct GenerationRequest {
  int n_total = 6000;
  int ratio_hard = 1;
  int ratio_easy = 1;
  double rouge_threshold = 0.7;
  int attempt_budget_factor = 5;
  int iteration = 1;  // stamped on accepted instructions as iteration_born
};

struct CandidateAudit {
  std::string source_id;
  Origin kind = Origin::kGeneratedHard;
  std::string text;
  double max_score = 0.0;
  bool accepted = false;
  std::string reason;  // why a candidate was rejected
};

struct GenerationResult {
  std::vector<Instruction> accepted;  // acceptance order
  int target_hard = 0;
  int target_easy = 0;
  int accepted_hard = 0;
  int accepted_easy = 0;
  int attempts_hard = 0;
  int attempts_easy = 0;
  bool budget_exhausted = false;
  // Set when no hard instruction was left and the hard quota was filled from
  // the top decile of easy ones.
  bool equilibrium = false;
  std::vector<CandidateAudit> audit;
};

void to_json(nlohmann::json& j, const GenerationResult& r);
void from_json(const nlohmann::json& j, GenerationResult& r);

// hard = round(n * ratio_hard / (ratio_hard + ratio_easy)), easy = n - hard.
std::pair<int, int> generation_targets(int n_total, int ratio_hard, int ratio_easy);

// Samples sources uniformly with replacement, prompts the generator with the
// hard or easy template and keeps completions whose ROUGE-L against the cache
// snapshot and the already-accepted batch stays below the threshold. Each
// kind gets attempt_budget_factor x its target attempts; running out returns
// a partial batch with budget_exhausted set.
GenerationResult generate_batch(std::span<const ScoredInstruction> hard_set,
                                std::span<const ScoredInstruction> easy_set,
                                ChatBackend& generator, const GenerationRequest& request,
                                std::span<const Instruction> cache_snapshot, std::mt19937_64& rng,
                                const StageOptions& options);

}  // namespace akd
