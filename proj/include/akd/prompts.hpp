#pragma once

// The four role templates (teacher response, referee comparison, hard and
// easy instruction generation) and the referee score parser.

#include <array>
#include <filesystem>
#include <string>
#include <string_view>

namespace akd {

enum class TemplateId { kTeacherResponse, kRefereeCompare, kGenHard, kGenEasy };

// File-name stem used for overrides: teacher_response, referee_compare, ...
std::string_view template_name(TemplateId id);

struct RenderedPrompt {
  std::string system_text;
  std::string user_text;
  TemplateId template_id;
};

struct PromptTemplate {
  std::string system_text;
  std::string user_text;  // with {instruction}, {answer_1}, {answer_2} placeholders
};

// A complete set of templates. builtin() holds the reference wording; a
// directory may override either half of any template with files named
// <template_name>.system.txt / <template_name>.user.txt.
class PromptSet {
 public:
  static const PromptSet& builtin();
  static PromptSet with_overrides(const std::filesystem::path& dir);

  const PromptTemplate& get(TemplateId id) const;

  RenderedPrompt render_response(std::string_view instruction) const;
  RenderedPrompt render_referee(std::string_view instruction, std::string_view answer_1,
                                std::string_view answer_2) const;
  RenderedPrompt render_hard_gen(std::string_view instruction) const;
  RenderedPrompt render_easy_gen(std::string_view instruction) const;

 private:
  std::array<PromptTemplate, 4> templates_;
};

RenderedPrompt render_response_prompt(std::string_view instruction);
RenderedPrompt render_referee_prompt(std::string_view instruction, std::string_view answer_1,
                                     std::string_view answer_2);
RenderedPrompt render_hard_gen_prompt(std::string_view instruction);
RenderedPrompt render_easy_gen_prompt(std::string_view instruction);

// Alpaca records split a task into a prompt and an optional instance input;
// they are joined with one line break.
std::string concat_alpaca(std::string_view instruction_prompt, std::string_view instance_input);

struct RefereeScores {
  double score_1 = 0.0;
  double score_2 = 0.0;
  bool clamped = false;  // at least one score was outside [1, 10]
};

enum class ParseMode {
  kTolerant,  // case-insensitive, optional "the", markdown decoration, trailing text
  kStrict,    // exactly "Score of the Assistant N: <number>" lines
};

// Uses the last line carrying each label. Throws ParseError when either
// label is missing or not followed by a number.
RefereeScores parse_referee_scores(std::string_view text, ParseMode mode = ParseMode::kTolerant);

// The output block the referee template asks for.
std::string format_referee_output(std::string_view evidence, double score_1, double score_2);

// Generator completions sometimes echo the "#Created Instruction#:" label.
std::string extract_generated_instruction(std::string_view completion);

}  // namespace akd
