#include "akd/evalkit.hpp"

#include <map>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "akd/core.hpp"
#include "akd/error.hpp"
#include "akd/jsonl.hpp"
#include "akd/parallel.hpp"

namespace akd {

using nlohmann::json;

McqItem make_mcq_item(std::string id, std::string question, std::vector<std::string> choices,
                      char gold, std::string task) {
  if (trim(question).empty()) throw PreconditionError("mcq item " + id + ": empty question");
  if (choices.empty() || choices.size() > 26) {
    throw PreconditionError(fmt::format("mcq item {}: {} choices (need 1-26)", id, choices.size()));
  }
  const char last = static_cast<char>('A' + choices.size() - 1);
  if (gold < 'A' || gold > last) {
    throw PreconditionError(fmt::format("mcq item {}: gold label '{}' not in A-{}", id, gold, last));
  }
  return {std::move(id), std::move(question), std::move(choices), gold, std::move(task)};
}

std::vector<McqItem> load_mcq_items(const std::filesystem::path& path) {
  std::vector<McqItem> items;
  for (const auto& row : read_jsonl(path)) {
    const std::string id = row.contains("id") ? row["id"].get<std::string>()
                                              : fmt::format("mcq-{:05}", items.size());
    try {
      const auto gold = row.at("gold").get<std::string>();
      if (gold.size() != 1) throw PreconditionError("gold must be one letter, got \"" + gold + "\"");
      items.push_back(make_mcq_item(id, row.at("question").get<std::string>(),
                                    row.at("choices").get<std::vector<std::string>>(), gold[0],
                                    row.value("task", std::string("default"))));
    } catch (const json::exception& e) {
      throw PreconditionError(path.string() + ": item " + id + ": " + e.what());
    }
  }
  if (items.empty()) throw PreconditionError(path.string() + ": no items");
  return items;
}

std::optional<char> extract_choice(std::string_view response) {
  for (char c : response) {
    if (c >= 'A' && c <= 'Z') return c;
  }
  return std::nullopt;
}

std::string render_mcq_prompt(const McqItem& item) {
  std::string out = "Q: " + item.question + "\n\nAnswer Choices:";
  for (std::size_t i = 0; i < item.choices.size(); ++i) {
    out += fmt::format(" ({}) {}", static_cast<char>('A' + i), item.choices[i]);
  }
  out += fmt::format("\nA: Among A through {}, the answer is",
                     static_cast<char>('A' + item.choices.size() - 1));
  return out;
}

void to_json(json& j, const AccuracyReport& r) {
  json items = json::array();
  for (const auto& o : r.items) {
    items.push_back({{"id", o.id},
                     {"task", o.task},
                     {"response", o.response},
                     {"predicted", o.predicted ? json(std::string(1, *o.predicted)) : json()},
                     {"correct", o.correct},
                     {"backend_failure", o.backend_failure}});
  }
  json tasks = json::array();
  for (const auto& t : r.tasks) {
    tasks.push_back(
        {{"task", t.task}, {"n", t.n}, {"correct", t.correct}, {"accuracy", t.accuracy}});
  }
  j = {{"tasks", tasks},
       {"overall_accuracy", r.overall_accuracy},
       {"macro_accuracy", r.macro_accuracy},
       {"backend_failures", r.backend_failures},
       {"items", items}};
}

AccuracyReport eval_mcq(ChatBackend& model, std::span<const McqItem> items,
                        const RoleProfile& profile, int concurrency, const PromptSet& prompts) {
  if (items.empty()) throw PreconditionError("eval_mcq needs at least one item");
  AccuracyReport report;
  report.items.resize(items.size());
  parallel_for(items.size(), static_cast<std::size_t>(concurrency), [&](std::size_t i) {
    const auto& item = items[i];
    auto& out = report.items[i];
    out.id = item.id;
    out.task = item.task;
    try {
      const auto prompt = prompts.render_response(render_mcq_prompt(item));
      out.response = model.complete(profile, prompt.system_text, prompt.user_text).text;
    } catch (const BackendError& e) {
      spdlog::warn("mcq item {}: {}", item.id, e.what());
      out.backend_failure = true;
      return;
    }
    out.predicted = extract_choice(out.response);
    out.correct = out.predicted == item.gold;
  });

  std::map<std::string, TaskAccuracy> by_task;
  std::size_t correct = 0;
  for (const auto& o : report.items) {
    auto& t = by_task[o.task];
    t.task = o.task;
    ++t.n;
    t.correct += o.correct ? 1 : 0;
    correct += o.correct ? 1 : 0;
    report.backend_failures += o.backend_failure ? 1 : 0;
  }
  double sum = 0.0;
  for (auto& [name, t] : by_task) {
    t.accuracy = 100.0 * static_cast<double>(t.correct) / static_cast<double>(t.n);
    sum += t.accuracy;
    report.tasks.push_back(t);
  }
  report.overall_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(items.size());
  report.macro_accuracy = sum / static_cast<double>(report.tasks.size());
  return report;
}

std::string format_accuracy_table(const AccuracyReport& report) {
  std::size_t width = 4;
  for (const auto& t : report.tasks) width = std::max(width, t.task.size());
  std::string out = fmt::format("{:<{}}  {:>6}  {:>7}  {:>9}\n", "task", width, "n", "correct",
                                "accuracy%");
  for (const auto& t : report.tasks) {
    out += fmt::format("{:<{}}  {:>6}  {:>7}  {:>9.2f}\n", t.task, width, t.n, t.correct,
                       t.accuracy);
  }
  out += fmt::format("overall {:.2f}%  macro {:.2f}%", report.overall_accuracy,
                     report.macro_accuracy);
  if (report.backend_failures > 0) {
    out += fmt::format("  ({} backend failures counted wrong)", report.backend_failures);
  }
  out += "\n";
  return out;
}

// ---------------------------------------------------------------------------

std::vector<PairwiseQuestion> load_pairwise_questions(const std::filesystem::path& path) {
  std::vector<PairwiseQuestion> out;
  for (const auto& row : read_jsonl(path)) {
    PairwiseQuestion q;
    q.id = row.contains("id") ? (row["id"].is_string() ? row["id"].get<std::string>()
                                                        : row["id"].dump())
                              : fmt::format("q-{:05}", out.size());
    if (row.contains("question")) {
      q.question = row["question"].get<std::string>();
    } else if (row.contains("instruction")) {
      q.question = row["instruction"].get<std::string>();
    }
    if (trim(q.question).empty()) {
      throw PreconditionError(path.string() + ": question " + q.id + " has no text");
    }
    q.category = row.value("category", std::string());
    out.push_back(std::move(q));
  }
  if (out.empty()) throw PreconditionError(path.string() + ": no questions");
  return out;
}

PairwiseSetting parse_pairwise_setting(std::string_view name) {
  if (name == "setting1") return PairwiseSetting::kSetting1;
  if (name == "setting2") return PairwiseSetting::kSetting2;
  throw PreconditionError("unknown setting \"" + std::string(name) +
                          "\" (expected setting1 or setting2)");
}

double relative_score(std::span<const double> candidate, std::span<const double> reference) {
  if (candidate.empty() || candidate.size() != reference.size()) {
    throw PreconditionError(fmt::format("relative_score needs equal non-empty lists (got {} and {})",
                                        candidate.size(), reference.size()));
  }
  const double c = std::accumulate(candidate.begin(), candidate.end(), 0.0);
  const double r = std::accumulate(reference.begin(), reference.end(), 0.0);
  if (!(r > 0.0)) throw PreconditionError("relative_score: reference total must be > 0");
  return 100.0 * c / r;
}

namespace {

std::optional<RefereeScores> rate_once(ChatBackend& rater, const RenderedPrompt& prompt,
                                       const PairwiseOptions& options, std::string& evidence) {
  for (int attempt = 0; attempt <= options.parse_retries; ++attempt) {
    evidence = rater.complete(options.rater, prompt.system_text, prompt.user_text).text;
    try {
      return parse_referee_scores(evidence, options.parse_mode);
    } catch (const ParseError&) {
    }
  }
  return std::nullopt;
}

struct QuestionOutcome {
  std::optional<PairwiseVerdict> verdict;
  std::string excluded_reason;
};

QuestionOutcome rate_question(const PairwiseQuestion& q, ChatBackend& candidate,
                              ChatBackend& reference, ChatBackend& rater,
                              const PairwiseOptions& options) {
  QuestionOutcome outcome;
  PairwiseVerdict v;
  v.id = q.id;
  v.category = q.category;
  const auto& prompts = *options.prompts;
  try {
    const auto ask = prompts.render_response(q.question);
    v.candidate_response = candidate.complete(options.candidate, ask.system_text, ask.user_text).text;
    v.reference_response = reference.complete(options.reference, ask.system_text, ask.user_text).text;
  } catch (const BackendError& e) {
    outcome.excluded_reason = std::string("response failed: ") + e.what();
    return outcome;
  }
  if (trim(v.candidate_response).empty() || trim(v.reference_response).empty()) {
    outcome.excluded_reason = "empty response";
    return outcome;
  }

  // Each entry: (reference presented first?).
  std::vector<bool> orders;
  if (options.setting == PairwiseSetting::kSetting1) {
    orders = {true};
  } else {
    for (int s = 0; s < options.evidence_k; ++s) {
      orders.push_back(true);
      orders.push_back(false);
    }
  }

  double cand_sum = 0.0, ref_sum = 0.0;
  try {
    for (bool reference_first : orders) {
      const auto prompt =
          reference_first
              ? prompts.render_referee(q.question, v.reference_response, v.candidate_response)
              : prompts.render_referee(q.question, v.candidate_response, v.reference_response);
      std::string evidence;
      const auto scores = rate_once(rater, prompt, options, evidence);
      v.evidence.push_back(std::move(evidence));
      if (!scores) {
        outcome.excluded_reason = "rater output unparseable after retries";
        return outcome;
      }
      ref_sum += reference_first ? scores->score_1 : scores->score_2;
      cand_sum += reference_first ? scores->score_2 : scores->score_1;
    }
  } catch (const BackendError& e) {
    outcome.excluded_reason = std::string("rater failed: ") + e.what();
    return outcome;
  }
  v.candidate_score = cand_sum / static_cast<double>(orders.size());
  v.reference_score = ref_sum / static_cast<double>(orders.size());
  outcome.verdict = std::move(v);
  return outcome;
}

const char* setting_name(PairwiseSetting s) {
  return s == PairwiseSetting::kSetting1 ? "setting1" : "setting2";
}

}  // namespace

RelativeQualityReport eval_pairwise(ChatBackend& candidate, ChatBackend& reference,
                                    ChatBackend& rater, std::span<const PairwiseQuestion> questions,
                                    const PairwiseOptions& options) {
  if (questions.empty()) throw PreconditionError("eval_pairwise needs at least one question");
  if (options.evidence_k < 1) throw PreconditionError("evidence_k must be >= 1");

  std::vector<QuestionOutcome> outcomes(questions.size());
  parallel_for(questions.size(), static_cast<std::size_t>(options.concurrency),
               [&](std::size_t i) {
                 outcomes[i] = rate_question(questions[i], candidate, reference, rater, options);
               });

  RelativeQualityReport report;
  report.setting = options.setting;
  report.evidence_k = options.setting == PairwiseSetting::kSetting1 ? 1 : options.evidence_k;
  std::map<std::string, CategoryScore> by_category;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    auto& o = outcomes[i];
    if (!o.verdict) {
      spdlog::warn("question {} excluded: {}", questions[i].id, o.excluded_reason);
      report.excluded.push_back({questions[i].id, o.excluded_reason});
      continue;
    }
    const auto& v = *o.verdict;
    report.candidate_total += v.candidate_score;
    report.reference_total += v.reference_score;
    if (!v.category.empty()) {
      auto& c = by_category[v.category];
      c.category = v.category;
      ++c.n;
      c.candidate_total += v.candidate_score;
      c.reference_total += v.reference_score;
    }
    report.verdicts.push_back(std::move(*o.verdict));
  }
  if (report.verdicts.empty()) {
    throw PreconditionError("every question was excluded; no relative score");
  }
  std::vector<double> cand, ref;
  for (const auto& v : report.verdicts) {
    cand.push_back(v.candidate_score);
    ref.push_back(v.reference_score);
  }
  report.relative_score = relative_score(cand, ref);
  for (auto& [name, c] : by_category) {
    c.relative_score = 100.0 * c.candidate_total / c.reference_total;
    report.categories.push_back(c);
  }
  return report;
}

void to_json(json& j, const RelativeQualityReport& r) {
  json verdicts = json::array();
  for (const auto& v : r.verdicts) {
    verdicts.push_back({{"id", v.id},
                        {"category", v.category},
                        {"candidate_score", v.candidate_score},
                        {"reference_score", v.reference_score},
                        {"candidate_response", v.candidate_response},
                        {"reference_response", v.reference_response},
                        {"evidence", v.evidence}});
  }
  json excluded = json::array();
  for (const auto& e : r.excluded) excluded.push_back({{"id", e.id}, {"reason", e.reason}});
  json categories = json::array();
  for (const auto& c : r.categories) {
    categories.push_back({{"category", c.category},
                          {"n", c.n},
                          {"candidate_total", c.candidate_total},
                          {"reference_total", c.reference_total},
                          {"relative_score", c.relative_score}});
  }
  j = {{"setting", setting_name(r.setting)},
       {"evidence_k", r.evidence_k},
       {"relative_score", r.relative_score},
       {"candidate_total", r.candidate_total},
       {"reference_total", r.reference_total},
       {"categories", categories},
       {"excluded", excluded},
       {"verdicts", verdicts}};
}

std::string format_relative_quality(const RelativeQualityReport& r) {
  std::string out = fmt::format("{} (k={}): relative score {:.2f}% over {} questions\n",
                                setting_name(r.setting), r.evidence_k, r.relative_score,
                                r.verdicts.size());
  for (const auto& c : r.categories) {
    out += fmt::format("  {:<20} n={:<5} {:.2f}%\n", c.category, c.n, c.relative_score);
  }
  if (!r.excluded.empty()) out += fmt::format("  excluded: {}\n", r.excluded.size());
  return out;
}

}  // namespace akd
