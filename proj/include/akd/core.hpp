#pragma once

// Domain types shared by every stage: instructions, the Train/Cache pools and
// the per-instruction referee score record.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace akd {

enum class Origin { kSeed, kGeneratedHard, kGeneratedEasy };

NLOHMANN_JSON_SERIALIZE_ENUM(Origin, {
                                         {Origin::kSeed, "seed"},
                                         {Origin::kGeneratedHard, "generated-hard"},
                                         {Origin::kGeneratedEasy, "generated-easy"},
                                     })

struct Instruction {
  std::string id;
  std::string text;
  Origin origin = Origin::kSeed;
  int iteration_born = 0;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

// Builds an instruction, rejecting blank text or an empty id.
Instruction make_instruction(std::string id, std::string text, Origin origin = Origin::kSeed,
                             int iteration_born = 0);

void to_json(nlohmann::json& j, const Instruction& ins);
void from_json(const nlohmann::json& j, Instruction& ins);

// Train Pool (instructions the next imitation stage learns from) and Cache
// Pool (append-only archive the referee scans for hard instructions).
// Values are snapshots; every transition below returns a new state.
struct PoolState {
  std::vector<Instruction> train_pool;
  std::vector<Instruction> cache_pool;

  friend bool operator==(const PoolState&, const PoolState&) = default;
};

PoolState pool_init(std::span<const Instruction> seeds);
PoolState pool_rejuvenate(const PoolState& state, std::span<const Instruction> fresh);
PoolState pool_enrich(const PoolState& state, std::span<const Instruction> fresh);

// Line-delimited pool file, one {id, text, origin, iteration_born} per line.
void save_pool(const std::filesystem::path& path, std::span<const Instruction> pool);
std::vector<Instruction> load_pool(const std::filesystem::path& path);

// Seed ingestion. Accepts pool records, Alpaca records ({instruction, input})
// either line-delimited or as a single JSON array. Ids default to seed-NNNNN.
std::vector<Instruction> load_seeds(const std::filesystem::path& path);

enum class Label { kHard, kEasy, kUnscored };

NLOHMANN_JSON_SERIALIZE_ENUM(Label, {
                                        {Label::kHard, "hard"},
                                        {Label::kEasy, "easy"},
                                        {Label::kUnscored, "unscored"},
                                    })

// Scores one referee run assigned to each model, regardless of the position
// the model's answer occupied in that run.
struct RunScores {
  double teacher = 0.0;
  double student = 0.0;

  friend bool operator==(const RunScores&, const RunScores&) = default;
};

struct ScoreRecord {
  std::string instruction_id;
  std::string teacher_response;
  std::string student_response;
  std::optional<RunScores> run1;  // teacher presented as Assistant 1
  std::optional<RunScores> run2;  // positions exchanged
  double avg_teacher = 0.0;
  double avg_student = 0.0;
  double d = 0.0;
  Label label = Label::kUnscored;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

// hard iff d >= tau.
inline Label classify(double d, double tau) { return d >= tau ? Label::kHard : Label::kEasy; }

// Averages both runs and labels against tau.
ScoreRecord make_score_record(std::string instruction_id, std::string teacher_response,
                              std::string student_response, RunScores run1, RunScores run2,
                              double tau);
ScoreRecord make_unscored_record(std::string instruction_id, std::string teacher_response,
                                 std::string student_response);

void to_json(nlohmann::json& j, const ScoreRecord& r);
void from_json(const nlohmann::json& j, ScoreRecord& r);

std::string_view trim(std::string_view s);

}  // namespace akd
