#pragma once

// Evaluation harnesses: zero-shot multiple-choice accuracy with first-capital
// answer parsing, and pairwise relative response quality judged by a rater
// model.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "akd/backends.hpp"
#include "akd/prompts.hpp"

namespace akd {

// ---------------------------------------------------------------------------
// Multiple choice

struct McqItem {
  std::string id;
  std::string question;
  std::vector<std::string> choices;  // labelled A, B, ... in order
  char gold = 'A';
  std::string task;
};

// Rejects an empty question, no choices, more than 26 choices, or a gold
// label outside the choice labels.
McqItem make_mcq_item(std::string id, std::string question, std::vector<std::string> choices,
                      char gold, std::string task);

// One {question, choices[], gold, task} object per line; `id` is optional.
std::vector<McqItem> load_mcq_items(const std::filesystem::path& path);

// First character in A-Z anywhere in the text. "The answer is (B)" yields T.
std::optional<char> extract_choice(std::string_view response);

// "Q: <question>\n\nAnswer Choices: (A) x (B) y\nA: Among A through B, the answer is"
std::string render_mcq_prompt(const McqItem& item);

struct McqOutcome {
  std::string id;
  std::string task;
  std::string response;
  std::optional<char> predicted;
  bool correct = false;
  bool backend_failure = false;
};

struct TaskAccuracy {
  std::string task;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;  // percent
};

struct AccuracyReport {
  std::vector<McqOutcome> items;  // input order
  std::vector<TaskAccuracy> tasks;  // sorted by task name
  double overall_accuracy = 0.0;  // percent over all items
  double macro_accuracy = 0.0;    // mean of per-task percentages
  std::size_t backend_failures = 0;
};

void to_json(nlohmann::json& j, const AccuracyReport& r);

// The MCQ text is sent as the instruction of the response template. A
// backend failure counts as an incorrect answer and is flagged.
AccuracyReport eval_mcq(ChatBackend& model, std::span<const McqItem> items,
                        const RoleProfile& profile, int concurrency = 8,
                        const PromptSet& prompts = PromptSet::builtin());

// Plain-text table: task, n, correct, accuracy%.
std::string format_accuracy_table(const AccuracyReport& report);

// ---------------------------------------------------------------------------
// Pairwise relative quality

struct PairwiseQuestion {
  std::string id;
  std::string question;
  std::string category;  // optional
};

// One {question, id?, category?} object per line ("instruction" is accepted
// for "question").
std::vector<PairwiseQuestion> load_pairwise_questions(const std::filesystem::path& path);

enum class PairwiseSetting {
  kSetting1,  // one rating, reference presented as Assistant 1
  kSetting2,  // k ratings in each presentation order, averaged
};

PairwiseSetting parse_pairwise_setting(std::string_view name);

struct PairwiseOptions {
  PairwiseSetting setting = PairwiseSetting::kSetting2;
  int evidence_k = 3;
  int concurrency = 8;
  int parse_retries = 2;
  ParseMode parse_mode = ParseMode::kTolerant;
  const PromptSet* prompts = &PromptSet::builtin();
  RoleProfile candidate = role_profile(Role::kStudent);
  RoleProfile reference = role_profile(Role::kTeacher);
  RoleProfile rater = role_profile(Role::kRater);
};

struct PairwiseVerdict {
  std::string id;
  std::string category;
  std::string candidate_response;
  std::string reference_response;
  std::vector<std::string> evidence;  // raw rater outputs
  double candidate_score = 0.0;       // averaged over orders and samples
  double reference_score = 0.0;
};

struct ExcludedQuestion {
  std::string id;
  std::string reason;
};

struct CategoryScore {
  std::string category;
  std::size_t n = 0;
  double candidate_total = 0.0;
  double reference_total = 0.0;
  double relative_score = 0.0;
};

struct RelativeQualityReport {
  PairwiseSetting setting = PairwiseSetting::kSetting2;
  int evidence_k = 0;
  std::vector<PairwiseVerdict> verdicts;  // input order, excluded ones omitted
  std::vector<ExcludedQuestion> excluded;
  std::vector<CategoryScore> categories;  // labelled questions only, sorted
  double candidate_total = 0.0;
  double reference_total = 0.0;
  double relative_score = 0.0;
};

void to_json(nlohmann::json& j, const RelativeQualityReport& r);

// Both models answer each question with the response template; the rater
// scores the pair. Questions whose responses or ratings fail are excluded
// and listed. Throws PreconditionError when every question is excluded.
RelativeQualityReport eval_pairwise(ChatBackend& candidate, ChatBackend& reference,
                                    ChatBackend& rater, std::span<const PairwiseQuestion> questions,
                                    const PairwiseOptions& options = {});

std::string format_relative_quality(const RelativeQualityReport& report);

// 100 * sum(candidate) / sum(reference).
double relative_score(std::span<const double> candidate, std::span<const double> reference);

}  // namespace akd
