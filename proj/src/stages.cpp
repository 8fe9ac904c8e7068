#include "akd/stages.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "akd/error.hpp"
#include "akd/jsonl.hpp"
#include "akd/parallel.hpp"
#include "akd/rouge.hpp"

namespace akd {

using nlohmann::json;

StageOptions StageOptions::from_config(const Config& config, const PromptSet& prompts) {
  StageOptions o;
  o.prompts = &prompts;
  o.concurrency = config.concurrency;
  o.max_drop_fraction = config.max_drop_fraction;
  o.max_unscored_fraction = config.max_unscored_fraction;
  o.referee_parse_retries = config.referee_parse_retries;
  o.parse_mode = config.strict_referee_parse ? ParseMode::kStrict : ParseMode::kTolerant;
  o.teacher = config.profile(Role::kTeacher);
  o.student = config.profile(Role::kStudent);
  o.referee = config.profile(Role::kReferee);
  o.generator = config.profile(Role::kGenerator);
  return o;
}

void save_dataset(const std::filesystem::path& path, const TrainingDataset& dataset) {
  std::vector<json> rows;
  rows.reserve(dataset.records.size());
  for (const auto& r : dataset.records) {
    rows.push_back({{"instruction", r.instruction}, {"response", r.response}});
  }
  write_jsonl(path, rows);
}

std::vector<TrainingRecord> load_dataset(const std::filesystem::path& path) {
  std::vector<TrainingRecord> out;
  for (const auto& row : read_jsonl(path)) {
    out.push_back({"", row.at("instruction").get<std::string>(), row.at("response").get<std::string>()});
  }
  return out;
}

namespace {

std::optional<std::string> try_complete(ChatBackend& backend, const RoleProfile& profile,
                                        const RenderedPrompt& prompt, std::string_view what) {
  try {
    auto result = backend.complete(profile, prompt.system_text, prompt.user_text);
    if (result.finish_reason == FinishReason::kLength) {
      spdlog::debug("{}: completion truncated at max_tokens", what);
    }
    return std::move(result.text);
  } catch (const BackendError& e) {
    spdlog::warn("{}: {}", what, e.what());
    return std::nullopt;
  }
}

std::string percent(double x) { return fmt::format("{:.1f}%", 100.0 * x); }

}  // namespace

TrainingDataset imitate(std::span<const Instruction> train_pool, ChatBackend& teacher,
                        const StageOptions& options, int iteration, TeacherCache* cache) {
  if (train_pool.empty()) throw PreconditionError("imitation needs a non-empty train pool");
  std::vector<std::optional<std::string>> responses(train_pool.size());
  parallel_for(train_pool.size(), static_cast<std::size_t>(options.concurrency), [&](std::size_t i) {
    const auto& ins = train_pool[i];
    responses[i] = try_complete(teacher, options.teacher, options.prompts->render_response(ins.text),
                                "teacher response for " + ins.id);
  });

  TrainingDataset ds;
  ds.iteration = iteration;
  ds.source_pool_size = train_pool.size();
  for (std::size_t i = 0; i < train_pool.size(); ++i) {
    if (!responses[i]) {
      ++ds.dropped;
      continue;
    }
    ds.records.push_back({train_pool[i].id, train_pool[i].text, *responses[i]});
    if (cache) (*cache)[train_pool[i].id] = *responses[i];
  }
  const double drop_rate = static_cast<double>(ds.dropped) / static_cast<double>(train_pool.size());
  if (ds.dropped > 0) {
    spdlog::warn("imitation dropped {} of {} instructions", ds.dropped, train_pool.size());
  }
  if (drop_rate > options.max_drop_fraction) {
    throw StageError("imitation dropped " + percent(drop_rate) + " of the train pool (limit " +
                     percent(options.max_drop_fraction) + ")");
  }
  return ds;
}

namespace {

// One referee run; nullopt once every allowed attempt failed to parse or the
// transport gave up.
std::optional<RefereeScores> referee_run(ChatBackend& referee, const RenderedPrompt& prompt,
                                         const StageOptions& options, std::string_view id) {
  for (int attempt = 0; attempt <= options.referee_parse_retries; ++attempt) {
    std::string text;
    try {
      text = referee.complete(options.referee, prompt.system_text, prompt.user_text).text;
    } catch (const BackendError& e) {
      spdlog::warn("referee for {}: {}", id, e.what());
      return std::nullopt;
    }
    try {
      return parse_referee_scores(text, options.parse_mode);
    } catch (const ParseError& e) {
      spdlog::debug("referee for {} attempt {}: {}", id, attempt + 1, e.what());
    }
  }
  return std::nullopt;
}

}  // namespace

ScoreRecord score_instruction(const Instruction& instruction, std::string_view teacher_response,
                              std::string_view student_response, ChatBackend& referee, double tau,
                              const StageOptions& options) {
  const auto& prompts = *options.prompts;
  const auto first = prompts.render_referee(instruction.text, teacher_response, student_response);
  const auto second = prompts.render_referee(instruction.text, student_response, teacher_response);

  const auto run1 = referee_run(referee, first, options, instruction.id);
  const auto run2 = run1 ? referee_run(referee, second, options, instruction.id) : std::nullopt;
  if (!run1 || !run2) {
    return make_unscored_record(instruction.id, std::string(teacher_response),
                                std::string(student_response));
  }
  return make_score_record(instruction.id, std::string(teacher_response),
                           std::string(student_response),
                           RunScores{run1->score_1, run1->score_2},
                           RunScores{run2->score_2, run2->score_1}, tau);
}

double DiscriminationReport::hard_fraction() const {
  const auto scored = hard_ids.size() + easy_ids.size();
  return scored == 0 ? 0.0 : static_cast<double>(hard_ids.size()) / static_cast<double>(scored);
}

void to_json(json& j, const DiscriminationReport& r) {
  j = json{{"tau_used", r.tau_used},
           {"records", r.records},
           {"hard_ids", r.hard_ids},
           {"easy_ids", r.easy_ids},
           {"unscored_ids", r.unscored_ids}};
}

void from_json(const json& j, DiscriminationReport& r) {
  r.tau_used = j.at("tau_used").get<double>();
  r.records = j.at("records").get<std::vector<ScoreRecord>>();
  r.hard_ids = j.at("hard_ids").get<std::vector<std::string>>();
  r.easy_ids = j.at("easy_ids").get<std::vector<std::string>>();
  r.unscored_ids = j.at("unscored_ids").get<std::vector<std::string>>();
}

DiscriminationReport discriminate(std::span<const Instruction> cache_pool, ChatBackend& teacher,
                                  ChatBackend& student, ChatBackend& referee, double tau,
                                  const StageOptions& options, TeacherCache* cache) {
  if (cache_pool.empty()) throw PreconditionError("discrimination needs a non-empty cache pool");

  std::vector<std::optional<std::string>> cached(cache_pool.size());
  if (cache) {
    for (std::size_t i = 0; i < cache_pool.size(); ++i) {
      if (auto it = cache->find(cache_pool[i].id); it != cache->end()) cached[i] = it->second;
    }
  }

  DiscriminationReport report;
  report.tau_used = tau;
  report.records.resize(cache_pool.size());
  std::vector<char> fresh_teacher(cache_pool.size(), 0);  // written from workers

  parallel_for(cache_pool.size(), static_cast<std::size_t>(options.concurrency), [&](std::size_t i) {
    const auto& ins = cache_pool[i];
    const auto prompt = options.prompts->render_response(ins.text);
    std::optional<std::string> t = cached[i];
    if (!t) {
      t = try_complete(teacher, options.teacher, prompt, "teacher response for " + ins.id);
      fresh_teacher[i] = t.has_value() ? 1 : 0;
    }
    auto s = try_complete(student, options.student, prompt, "student response for " + ins.id);
    if (!t || !s || trim(*t).empty() || trim(*s).empty()) {
      report.records[i] = make_unscored_record(ins.id, t.value_or(""), s.value_or(""));
      return;
    }
    report.records[i] = score_instruction(ins, *t, *s, referee, tau, options);
  });

  for (std::size_t i = 0; i < cache_pool.size(); ++i) {
    const auto& r = report.records[i];
    if (cache && fresh_teacher[i]) (*cache)[r.instruction_id] = r.teacher_response;
    switch (r.label) {
      case Label::kHard: report.hard_ids.push_back(r.instruction_id); break;
      case Label::kEasy: report.easy_ids.push_back(r.instruction_id); break;
      case Label::kUnscored: report.unscored_ids.push_back(r.instruction_id); break;
    }
  }
  const double unscored_rate =
      static_cast<double>(report.unscored_ids.size()) / static_cast<double>(cache_pool.size());
  if (unscored_rate > options.max_unscored_fraction) {
    throw StageError("discrimination left " + percent(unscored_rate) +
                     " of the cache pool unscored (limit " +
                     percent(options.max_unscored_fraction) + ")");
  }
  return report;
}

void split_sources(std::span<const Instruction> cache_pool, const DiscriminationReport& report,
                   std::vector<ScoredInstruction>& hard, std::vector<ScoredInstruction>& easy) {
  std::map<std::string_view, const ScoreRecord*> by_id;
  for (const auto& r : report.records) by_id[r.instruction_id] = &r;
  hard.clear();
  easy.clear();
  for (const auto& ins : cache_pool) {
    auto it = by_id.find(ins.id);
    if (it == by_id.end()) continue;
    const ScoreRecord& r = *it->second;
    if (r.label == Label::kHard) hard.push_back({ins, r.d});
    if (r.label == Label::kEasy) easy.push_back({ins, r.d});
  }
}

namespace {

json audit_to_json(const CandidateAudit& a) {
  return json{{"source_id", a.source_id}, {"kind", a.kind},         {"text", a.text},
              {"max_score", a.max_score}, {"accepted", a.accepted}, {"reason", a.reason}};
}

CandidateAudit audit_from_json(const json& j) {
  return CandidateAudit{j.at("source_id").get<std::string>(), j.at("kind").get<Origin>(),
                        j.at("text").get<std::string>(),      j.at("max_score").get<double>(),
                        j.at("accepted").get<bool>(),         j.at("reason").get<std::string>()};
}

}  // namespace

void to_json(json& j, const GenerationResult& r) {
  json audit = json::array();
  for (const auto& a : r.audit) audit.push_back(audit_to_json(a));
  j = json{{"accepted", r.accepted},
           {"target_hard", r.target_hard},
           {"target_easy", r.target_easy},
           {"accepted_hard", r.accepted_hard},
           {"accepted_easy", r.accepted_easy},
           {"attempts_hard", r.attempts_hard},
           {"attempts_easy", r.attempts_easy},
           {"budget_exhausted", r.budget_exhausted},
           {"equilibrium", r.equilibrium},
           {"audit", std::move(audit)}};
}

void from_json(const json& j, GenerationResult& r) {
  r.accepted = j.at("accepted").get<std::vector<Instruction>>();
  r.target_hard = j.at("target_hard").get<int>();
  r.target_easy = j.at("target_easy").get<int>();
  r.accepted_hard = j.at("accepted_hard").get<int>();
  r.accepted_easy = j.at("accepted_easy").get<int>();
  r.attempts_hard = j.at("attempts_hard").get<int>();
  r.attempts_easy = j.at("attempts_easy").get<int>();
  r.budget_exhausted = j.at("budget_exhausted").get<bool>();
  r.equilibrium = j.at("equilibrium").get<bool>();
  r.audit.clear();
  for (const auto& a : j.at("audit")) r.audit.push_back(audit_from_json(a));
}

std::pair<int, int> generation_targets(int n_total, int ratio_hard, int ratio_easy) {
  if (n_total <= 0) throw PreconditionError("n_total must be > 0");
  if (ratio_hard < 0 || ratio_easy < 0 || ratio_hard + ratio_easy == 0) {
    throw PreconditionError("ratio components must be >= 0 and not both 0");
  }
  const int hard = static_cast<int>(std::lround(static_cast<double>(n_total) * ratio_hard /
                                                (ratio_hard + ratio_easy)));
  return {hard, n_total - hard};
}

GenerationResult generate_batch(std::span<const ScoredInstruction> hard_set,
                                std::span<const ScoredInstruction> easy_set,
                                ChatBackend& generator, const GenerationRequest& request,
                                std::span<const Instruction> cache_snapshot, std::mt19937_64& rng,
                                const StageOptions& options) {
  GenerationResult result;
  std::tie(result.target_hard, result.target_easy) =
      generation_targets(request.n_total, request.ratio_hard, request.ratio_easy);
  if (!(request.rouge_threshold > 0.0 && request.rouge_threshold <= 1.0)) {
    throw PreconditionError("rouge_threshold must lie in (0, 1]");
  }

  std::vector<ScoredInstruction> hard_sources(hard_set.begin(), hard_set.end());
  std::vector<ScoredInstruction> easy_sources(easy_set.begin(), easy_set.end());
  if (hard_sources.empty() && result.target_hard > 0) {
    if (easy_sources.empty()) throw StageError("no scored instructions to generate from");
    // Nothing is hard any more: draw the hard quota from the easy decile
    // closest to the threshold.
    std::vector<ScoredInstruction> by_d = easy_sources;
    std::stable_sort(by_d.begin(), by_d.end(),
                     [](const auto& a, const auto& b) { return a.d > b.d; });
    by_d.resize(std::max<std::size_t>(1, (by_d.size() + 9) / 10));
    hard_sources = std::move(by_d);
    result.equilibrium = true;
    spdlog::info("no hard instructions left; equilibrium reached");
  }
  if (easy_sources.empty() && result.target_easy > 0) {
    if (hard_sources.empty()) throw StageError("no scored instructions to generate from");
    easy_sources = hard_sources;
  }

  std::vector<std::string> snapshot_texts;
  snapshot_texts.reserve(cache_snapshot.size());
  std::unordered_set<std::string> taken_ids;
  for (const auto& ins : cache_snapshot) {
    snapshot_texts.push_back(ins.text);
    taken_ids.insert(ins.id);
  }
  DiversityIndex index(snapshot_texts);

  const int budget_hard = request.attempt_budget_factor * result.target_hard;
  const int budget_easy = request.attempt_budget_factor * result.target_easy;
  int next_seq = 0;
  auto next_id = [&] {
    std::string id;
    do {
      id = fmt::format("gen-{:02}-{:05}", request.iteration, next_seq++);
    } while (taken_ids.contains(id));
    taken_ids.insert(id);
    return id;
  };

  struct Planned {
    const ScoredInstruction* source;
    Origin kind;
    std::optional<std::string> completion;
  };

  for (;;) {
    const int need_hard = std::min(result.target_hard - result.accepted_hard,
                                   budget_hard - result.attempts_hard);
    const int need_easy = std::min(result.target_easy - result.accepted_easy,
                                   budget_easy - result.attempts_easy);
    if (need_hard <= 0 && need_easy <= 0) break;

    // Sources are drawn sequentially so the plan depends only on the RNG.
    std::vector<Planned> plan;
    auto draw = [&](const std::vector<ScoredInstruction>& from, Origin kind, int count) {
      std::uniform_int_distribution<std::size_t> pick(0, from.size() - 1);
      for (int i = 0; i < count; ++i) plan.push_back({&from[pick(rng)], kind, std::nullopt});
    };
    if (need_hard > 0) draw(hard_sources, Origin::kGeneratedHard, need_hard);
    if (need_easy > 0) draw(easy_sources, Origin::kGeneratedEasy, need_easy);
    result.attempts_hard += std::max(0, need_hard);
    result.attempts_easy += std::max(0, need_easy);

    parallel_for(plan.size(), static_cast<std::size_t>(options.concurrency), [&](std::size_t i) {
      auto& p = plan[i];
      const auto& text = p.source->instruction.text;
      const auto prompt = p.kind == Origin::kGeneratedHard ? options.prompts->render_hard_gen(text)
                                                           : options.prompts->render_easy_gen(text);
      p.completion = try_complete(generator, options.generator, prompt,
                                  "generation from " + p.source->instruction.id);
    });

    // Acceptance is serial and in plan order.
    for (auto& p : plan) {
      CandidateAudit audit;
      audit.source_id = p.source->instruction.id;
      audit.kind = p.kind;
      if (!p.completion) {
        audit.reason = "backend error";
      } else {
        audit.text = extract_generated_instruction(*p.completion);
        if (audit.text.empty()) {
          audit.reason = "empty completion";
        } else {
          const auto verdict = index.check(audit.text, request.rouge_threshold);
          audit.max_score = verdict.max_score;
          if (!verdict.valid) {
            audit.reason = "rouge-l overlap";
          } else {
            audit.accepted = true;
            index.add(audit.text);
            result.accepted.push_back(
                make_instruction(next_id(), audit.text, p.kind, request.iteration));
            ++(p.kind == Origin::kGeneratedHard ? result.accepted_hard : result.accepted_easy);
          }
        }
      }
      result.audit.push_back(std::move(audit));
    }
  }

  result.budget_exhausted = result.accepted_hard < result.target_hard ||
                            result.accepted_easy < result.target_easy;
  if (result.budget_exhausted) {
    spdlog::warn("generation budget exhausted: accepted {}/{} hard, {}/{} easy",
                 result.accepted_hard, result.target_hard, result.accepted_easy,
                 result.target_easy);
  }
  return result;
}

}  // namespace akd
