#include "akd/core.hpp"

#include <cstdio>
#include <unordered_set>

#include "akd/error.hpp"
#include "akd/jsonl.hpp"
#include "akd/prompts.hpp"

namespace akd {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  constexpr std::string_view kSpace = " \t\r\n\v\f";
  auto first = s.find_first_not_of(kSpace);
  if (first == std::string_view::npos) return {};
  auto last = s.find_last_not_of(kSpace);
  return s.substr(first, last - first + 1);
}

Instruction make_instruction(std::string id, std::string text, Origin origin,
                             int iteration_born) {
  if (id.empty()) throw PreconditionError("instruction id is empty");
  if (trim(text).empty()) throw PreconditionError("instruction " + id + " has blank text");
  if (iteration_born < 0) throw PreconditionError("instruction " + id + " born before 0");
  return Instruction{std::move(id), std::move(text), origin, iteration_born};
}

void to_json(json& j, const Instruction& ins) {
  j = json{{"id", ins.id},
           {"text", ins.text},
           {"origin", ins.origin},
           {"iteration_born", ins.iteration_born}};
}

void from_json(const json& j, Instruction& ins) {
  ins = make_instruction(j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                         j.at("origin").get<Origin>(), j.at("iteration_born").get<int>());
}

namespace {

// Throws naming the first id seen twice, optionally also against `existing`.
void require_unique_ids(std::span<const Instruction> fresh,
                        std::span<const Instruction> existing = {}) {
  std::unordered_set<std::string_view> seen;
  seen.reserve(existing.size() + fresh.size());
  for (const auto& ins : existing) seen.insert(ins.id);
  for (const auto& ins : fresh) {
    if (!seen.insert(ins.id).second) throw PreconditionError("duplicate instruction id: " + ins.id);
  }
}

}  // namespace

PoolState pool_init(std::span<const Instruction> seeds) {
  if (seeds.empty()) throw PreconditionError("seed instruction list is empty");
  require_unique_ids(seeds);
  std::vector<Instruction> pool(seeds.begin(), seeds.end());
  return PoolState{pool, pool};
}

PoolState pool_rejuvenate(const PoolState& state, std::span<const Instruction> fresh) {
  if (fresh.empty()) throw PreconditionError("cannot rejuvenate the train pool with no instructions");
  require_unique_ids(fresh);
  return PoolState{{fresh.begin(), fresh.end()}, state.cache_pool};
}

PoolState pool_enrich(const PoolState& state, std::span<const Instruction> fresh) {
  require_unique_ids(fresh, state.cache_pool);
  PoolState next{state.train_pool, state.cache_pool};
  next.cache_pool.insert(next.cache_pool.end(), fresh.begin(), fresh.end());
  return next;
}

void save_pool(const std::filesystem::path& path, std::span<const Instruction> pool) {
  std::vector<json> rows;
  rows.reserve(pool.size());
  for (const auto& ins : pool) rows.emplace_back(ins);
  write_jsonl(path, rows);
}

std::vector<Instruction> load_pool(const std::filesystem::path& path) {
  std::vector<Instruction> pool;
  for (const auto& row : read_jsonl(path)) {
    try {
      pool.push_back(row.get<Instruction>());
    } catch (const json::exception& e) {
      throw StateError(path.string() + ": bad pool record: " + e.what());
    }
  }
  return pool;
}

std::vector<Instruction> load_seeds(const std::filesystem::path& path) {
  std::vector<json> rows;
  const std::string content = read_file(path);
  if (!trim(content).empty() && trim(content).front() == '[') {
    try {
      rows = json::parse(content).get<std::vector<json>>();
    } catch (const json::exception& e) {
      throw StateError(path.string() + ": " + e.what());
    }
  } else {
    rows = read_jsonl(path);
  }

  std::vector<Instruction> seeds;
  seeds.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    char fallback_id[32];
    std::snprintf(fallback_id, sizeof fallback_id, "seed-%05zu", i);
    std::string id = row.contains("id") ? row["id"].get<std::string>() : fallback_id;
    std::string text;
    if (row.contains("text")) {
      text = row["text"].get<std::string>();
    } else if (row.contains("instruction")) {
      text = concat_alpaca(row["instruction"].get<std::string>(),
                           row.value("input", std::string{}));
    } else {
      throw StateError(path.string() + ": record " + std::to_string(i) +
                       " has neither \"text\" nor \"instruction\"");
    }
    seeds.push_back(make_instruction(std::move(id), std::move(text), Origin::kSeed, 0));
  }
  return seeds;
}

ScoreRecord make_score_record(std::string instruction_id, std::string teacher_response,
                              std::string student_response, RunScores run1, RunScores run2,
                              double tau) {
  ScoreRecord r;
  r.instruction_id = std::move(instruction_id);
  r.teacher_response = std::move(teacher_response);
  r.student_response = std::move(student_response);
  r.run1 = run1;
  r.run2 = run2;
  r.avg_teacher = (run1.teacher + run2.teacher) / 2.0;
  r.avg_student = (run1.student + run2.student) / 2.0;
  r.d = r.avg_teacher - r.avg_student;
  r.label = classify(r.d, tau);
  return r;
}

ScoreRecord make_unscored_record(std::string instruction_id, std::string teacher_response,
                                 std::string student_response) {
  ScoreRecord r;
  r.instruction_id = std::move(instruction_id);
  r.teacher_response = std::move(teacher_response);
  r.student_response = std::move(student_response);
  r.label = Label::kUnscored;
  return r;
}

namespace {

json run_to_json(const std::optional<RunScores>& run) {
  if (!run) return nullptr;
  return json{{"teacher", run->teacher}, {"student", run->student}};
}

std::optional<RunScores> run_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return RunScores{j.at("teacher").get<double>(), j.at("student").get<double>()};
}

}  // namespace

void to_json(json& j, const ScoreRecord& r) {
  j = json{{"instruction_id", r.instruction_id},
           {"teacher_response", r.teacher_response},
           {"student_response", r.student_response},
           {"run1", run_to_json(r.run1)},
           {"run2", run_to_json(r.run2)},
           {"avg_teacher", r.avg_teacher},
           {"avg_student", r.avg_student},
           {"d", r.d},
           {"label", r.label}};
}

void from_json(const json& j, ScoreRecord& r) {
  r.instruction_id = j.at("instruction_id").get<std::string>();
  r.teacher_response = j.at("teacher_response").get<std::string>();
  r.student_response = j.at("student_response").get<std::string>();
  r.run1 = run_from_json(j.at("run1"));
  r.run2 = run_from_json(j.at("run2"));
  r.avg_teacher = j.at("avg_teacher").get<double>();
  r.avg_student = j.at("avg_student").get<double>();
  r.d = j.at("d").get<double>();
  r.label = j.at("label").get<Label>();
}

}  // namespace akd
