#include "akd/prompts.hpp"

#include <fstream>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "akd/core.hpp"
#include "akd/error.hpp"
#include "akd/jsonl.hpp"

namespace akd {

namespace {

constexpr std::string_view kResponseSystem =
    "You are a helpful assistant that generates a response to a given task instruction.";

constexpr std::string_view kResponseUser =
    "### Instruction:\n"
    "{instruction}\n"
    "\n"
    "### Response:\n";

constexpr std::string_view kRefereeSystem =
    "You are a helpful and precise assistant for checking the quality of the answer.";

constexpr std::string_view kRefereeUser =
    "[Instruction]\n"
    "{instruction}\n"
    "\n"
    "[The Start of Assistant 1's Answer]\n"
    "{answer_1}\n"
    "[The End of Assistant 1's Answer]\n"
    "\n"
    "[The Start of Assistant 2's Answer]\n"
    "{answer_2}\n"
    "[The End of Assistant 2's Answer]\n"
    "\n"
    "[System]\n"
    "We would like to request your feedback on the performance of two AI assistants in response "
    "to the user instruction and input displayed above.\n"
    "\n"
    "Please rate the helpfulness, relevance, accuracy, and level of detail of their responses. "
    "Each assistant receives an overall score on a scale of 1 to 10, where a higher score "
    "indicates better overall performance.\n"
    "\n"
    "Please first provide a comprehensive explanation of your evaluation, avoiding any potential "
    "bias and ensuring that the order in which the responses were presented does not affect your "
    "judgment. Then, output two lines indicating the scores for Assistant 1 and 2, respectively.\n"
    "\n"
    "Output with the following format:\n"
    "Evaluation evidence: <your evaluation explanation here>\n"
    "Score of the Assistant 1: <score>\n"
    "Score of the Assistant 2: <score>";

constexpr std::string_view kGeneratorSystem = "You are a helpful assistant.";

constexpr std::string_view kGenHardUser =
    "I want you to act as an Instruction Creator.\n"
    "Your goal is to draw inspiration from the #Given Instruction# to create a brand new "
    "instruction.\n"
    "This new instruction should belong to the same domain and the same task type as the "
    "#Given Instruction#.\n"
    "The LENGTH and difficulty level of the #Created Instruction# should be similar to that of "
    "the #Given Instruction#.\n"
    "The #Created Instruction# must be reasonable and must be understood and responded to by "
    "humans.\n"
    "'#Given Instruction#', '#Created Instruction#', 'given instruction' and 'created "
    "instruction' are not allowed to appear in #Created Instruction#.\n"
    "\n"
    "#Given Instruction#:\n"
    "{instruction}\n"
    "\n"
    "#Created Instruction#:\n";

constexpr std::string_view kGenEasyUser =
    "I want you to act as an Instruction Creator.\n"
    "Your goal is to draw inspiration from the #Given Instruction# to create a brand new "
    "instruction.\n"
    "This new instruction should belong to the same domain as the #Given Instruction# but be "
    "even more rare.\n"
    "The LENGTH and difficulty level of the #Created Instruction# should be similar to that of "
    "the #Given Instruction#.\n"
    "The #Created Instruction# must be reasonable and must be understood and responded to by "
    "humans.\n"
    "'#Given Instruction#', '#Created Instruction#', 'given instruction' and 'created "
    "instruction' are not allowed to appear in #Created Instruction#.\n"
    "\n"
    "#Given Instruction#:\n"
    "{instruction}\n"
    "\n"
    "#Created Instruction#:\n";

constexpr std::array<std::string_view, 4> kNames = {"teacher_response", "referee_compare",
                                                    "gen_hard", "gen_easy"};

std::size_t index_of(TemplateId id) { return static_cast<std::size_t>(id); }

struct Substitution {
  std::string_view placeholder;
  std::string_view value;
};

// Single left-to-right pass: substituted values are never rescanned, so an
// instruction that itself contains "{answer_1}" is embedded verbatim.
std::string substitute(std::string_view tmpl, std::initializer_list<Substitution> subs) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& s : subs) {
        if (tmpl.substr(i, s.placeholder.size()) == s.placeholder) {
          out.append(s.value);
          i += s.placeholder.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out.push_back(tmpl[i++]);
  }
  return out;
}

void require_text(std::string_view what, std::string_view text) {
  if (trim(text).empty()) throw PreconditionError(std::string(what) + " is empty");
}

}  // namespace

std::string_view template_name(TemplateId id) { return kNames.at(index_of(id)); }

const PromptSet& PromptSet::builtin() {
  static const PromptSet set = [] {
    PromptSet s;
    s.templates_[index_of(TemplateId::kTeacherResponse)] = {std::string(kResponseSystem),
                                                            std::string(kResponseUser)};
    s.templates_[index_of(TemplateId::kRefereeCompare)] = {std::string(kRefereeSystem),
                                                           std::string(kRefereeUser)};
    s.templates_[index_of(TemplateId::kGenHard)] = {std::string(kGeneratorSystem),
                                                    std::string(kGenHardUser)};
    s.templates_[index_of(TemplateId::kGenEasy)] = {std::string(kGeneratorSystem),
                                                    std::string(kGenEasyUser)};
    return s;
  }();
  return set;
}

PromptSet PromptSet::with_overrides(const std::filesystem::path& dir) {
  PromptSet set = builtin();
  std::vector<std::string> issues;
  for (auto id : {TemplateId::kTeacherResponse, TemplateId::kRefereeCompare, TemplateId::kGenHard,
                  TemplateId::kGenEasy}) {
    auto& tmpl = set.templates_[index_of(id)];
    const std::string stem(template_name(id));
    if (auto p = dir / (stem + ".system.txt"); std::filesystem::exists(p)) {
      tmpl.system_text = read_file(p);
    }
    if (auto p = dir / (stem + ".user.txt"); std::filesystem::exists(p)) {
      tmpl.user_text = read_file(p);
    }
    std::vector<std::string_view> required = {"{instruction}"};
    if (id == TemplateId::kRefereeCompare) required = {"{instruction}", "{answer_1}", "{answer_2}"};
    for (auto ph : required) {
      if (tmpl.user_text.find(ph) == std::string::npos) {
        issues.push_back("templates_dir: " + stem + ".user.txt lacks " + std::string(ph));
      }
    }
  }
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return set;
}

const PromptTemplate& PromptSet::get(TemplateId id) const { return templates_.at(index_of(id)); }

RenderedPrompt PromptSet::render_response(std::string_view instruction) const {
  require_text("instruction", instruction);
  const auto& t = get(TemplateId::kTeacherResponse);
  return {t.system_text, substitute(t.user_text, {{"{instruction}", instruction}}),
          TemplateId::kTeacherResponse};
}

RenderedPrompt PromptSet::render_referee(std::string_view instruction, std::string_view answer_1,
                                         std::string_view answer_2) const {
  require_text("instruction", instruction);
  require_text("answer_1", answer_1);
  require_text("answer_2", answer_2);
  const auto& t = get(TemplateId::kRefereeCompare);
  return {t.system_text,
          substitute(t.user_text, {{"{instruction}", instruction},
                                   {"{answer_1}", answer_1},
                                   {"{answer_2}", answer_2}}),
          TemplateId::kRefereeCompare};
}

RenderedPrompt PromptSet::render_hard_gen(std::string_view instruction) const {
  require_text("instruction", instruction);
  const auto& t = get(TemplateId::kGenHard);
  return {t.system_text, substitute(t.user_text, {{"{instruction}", instruction}}),
          TemplateId::kGenHard};
}

RenderedPrompt PromptSet::render_easy_gen(std::string_view instruction) const {
  require_text("instruction", instruction);
  const auto& t = get(TemplateId::kGenEasy);
  return {t.system_text, substitute(t.user_text, {{"{instruction}", instruction}}),
          TemplateId::kGenEasy};
}

RenderedPrompt render_response_prompt(std::string_view instruction) {
  return PromptSet::builtin().render_response(instruction);
}

RenderedPrompt render_referee_prompt(std::string_view instruction, std::string_view answer_1,
                                     std::string_view answer_2) {
  return PromptSet::builtin().render_referee(instruction, answer_1, answer_2);
}

RenderedPrompt render_hard_gen_prompt(std::string_view instruction) {
  return PromptSet::builtin().render_hard_gen(instruction);
}

RenderedPrompt render_easy_gen_prompt(std::string_view instruction) {
  return PromptSet::builtin().render_easy_gen(instruction);
}

std::string concat_alpaca(std::string_view instruction_prompt, std::string_view instance_input) {
  if (instruction_prompt.empty()) throw PreconditionError("instruction prompt is empty");
  std::string out(instruction_prompt);
  if (!instance_input.empty()) {
    out.push_back('\n');
    out.append(instance_input);
  }
  return out;
}

RefereeScores parse_referee_scores(std::string_view text, ParseMode mode) {
  static const std::regex kTolerant(
      R"(^[\s*#_>\-]*score\s+of\s+(?:the\s+)?assistant\s*([12])\s*[*_]*\s*[:=]?\s*[*_]*\s*([0-9]+(?:\.[0-9]+)?))",
      std::regex::ECMAScript | std::regex::icase);
  static const std::regex kStrict(R"(^Score of the Assistant ([12]): ([0-9]+(?:\.[0-9]+)?)\s*$)");
  const std::regex& re = mode == ParseMode::kStrict ? kStrict : kTolerant;

  std::optional<double> scores[2];
  std::istringstream lines{std::string(text)};
  std::string line;
  std::smatch m;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::regex_search(line, m, re)) {
      scores[m[1].str() == "1" ? 0 : 1] = std::stod(m[2].str());
    }
  }
  if (!scores[0] || !scores[1]) {
    throw ParseError(std::string("referee output lacks a score for Assistant ") +
                     (scores[0] ? "2" : "1"));
  }

  RefereeScores out{*scores[0], *scores[1], false};
  for (double* s : {&out.score_1, &out.score_2}) {
    if (*s < 1.0 || *s > 10.0) {
      spdlog::warn("referee score {} outside [1, 10]; clamping", *s);
      *s = std::clamp(*s, 1.0, 10.0);
      out.clamped = true;
    }
  }
  return out;
}

std::string format_referee_output(std::string_view evidence, double score_1, double score_2) {
  return fmt::format(
      "Evaluation evidence: {}\nScore of the Assistant 1: {}\nScore of the Assistant 2: {}",
      evidence, score_1, score_2);
}

std::string extract_generated_instruction(std::string_view completion) {
  constexpr std::string_view kLabel = "#Created Instruction#:";
  std::string_view text = trim(completion);
  if (text.substr(0, kLabel.size()) == kLabel) text = trim(text.substr(kLabel.size()));
  return std::string(text);
}

}  // namespace akd
