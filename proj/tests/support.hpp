#pragma once

// Shared fixtures: temp dirs, scripted referees whose verdicts are read off
// the answers they judge, and in-process trainer stubs.

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <regex>
#include <string>
#include <string_view>
#include <unistd.h>

#include <fmt/format.h>

#include "akd/backends.hpp"
#include "akd/config.hpp"
#include "akd/orchestrator.hpp"
#include "akd/prompts.hpp"

namespace akd::testing {

inline std::filesystem::path source_dir() { return AKD_SOURCE_DIR; }

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            fmt::format("akd-test-{}-{}", ::getpid(), counter++);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(std::string_view rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Text between the start and end markers of one answer in a rendered
// referee prompt.
inline std::string answer_block(std::string_view user_text, int which) {
  const std::string start = fmt::format("[The Start of Assistant {}'s Answer]\n", which);
  const std::string end = fmt::format("\n[The End of Assistant {}'s Answer]", which);
  const auto a = user_text.find(start);
  if (a == std::string_view::npos) return {};
  const auto b = user_text.find(end, a + start.size());
  return std::string(user_text.substr(a + start.size(), b - a - start.size()));
}

// Answers carry "quality=<number>"; the referee scores each position with
// that number plus a positional bias.
inline double quality_of(std::string_view answer) {
  static const std::regex re(R"(quality=([0-9]+(?:\.[0-9]+)?))");
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_search(answer.begin(), answer.end(), m, re)) return std::stod(m[1].str());
  return 5.0;
}

inline MockResponder biased_referee(double bias_1, double bias_2 = 0.0) {
  return [=](const MockRequest& req) {
    const double s1 = quality_of(answer_block(req.user_text, 1)) + bias_1;
    const double s2 = quality_of(answer_block(req.user_text, 2)) + bias_2;
    return format_referee_output("scripted", s1, s2);
  };
}

// Trainer replacement: "base" -> "ckpt-1" -> "ckpt-2" ...
inline std::string next_checkpoint(const TrainerCall& call, const TrainerHookSpec&) {
  const auto& prev = call.prev_checkpoint;
  const int n = prev.rfind("ckpt-", 0) == 0 ? std::stoi(prev.substr(5)) : 0;
  return fmt::format("ckpt-{}", n + 1);
}

// Seed file of `count` distinct instructions.
inline std::filesystem::path write_seed_file(const std::filesystem::path& dir, int count) {
  static const char* kTopics[] = {"volcanoes", "tax law", "sourdough", "chess openings",
                                  "tidal energy", "bird migration", "jazz harmony",
                                  "compilers", "coral reefs", "medieval trade"};
  static const char* kTasks[] = {"Explain", "Summarize", "Write a short poem about",
                                 "List three facts about", "Describe the history of"};
  std::string body;
  for (int i = 0; i < count; ++i) {
    body += fmt::format("{{\"instruction\": \"{} {} (case {})\", \"input\": \"\"}}\n",
                        kTasks[i % 5], kTopics[(i / 5) % 10], i);
  }
  const auto path = dir / "seeds.jsonl";
  std::FILE* f = std::fopen(path.c_str(), "w");
  std::fputs(body.c_str(), f);
  std::fclose(f);
  return path;
}

// Mock-backed loop config over `seed_count` seeds in `dir`. Scripted rules:
// teacher/student pseudo-text, a referee drawing integer scores, and a
// generator emitting pseudo-word instructions.
inline Config desk_config(const std::filesystem::path& dir, int seed_count = 20,
                          int n_per_iteration = 6, int iterations = 3) {
  write_seed_file(dir, seed_count);
  nlohmann::json doc = {
      {"seed_file", "seeds.jsonl"},
      {"n_per_iteration", n_per_iteration},
      {"iterations", iterations},
      {"seed", 11},
      {"concurrency", 4},
      {"trainer", {{"kind", "subprocess"}, {"target", "unused"}}},
  };
  const nlohmann::json rules = {
      {"rules",
       {{{"role", "teacher"}, {"reply", "answer {words:16}"}},
        {{"role", "student"}, {"reply", "{words:8}"}},
        {{"role", "referee"},
         {"reply",
          "Evaluation evidence: {words:6}\nScore of the Assistant 1: {int:2:10}\n"
          "Score of the Assistant 2: {int:2:10}"}},
        {{"role", "generator"}, {"reply", "{words:9}"}},
        {{"role", "rater"},
         {"reply",
          "Evaluation evidence: ok\nScore of the Assistant 1: {int:5:9}\n"
          "Score of the Assistant 2: {int:5:9}"}}}}};
  for (Role r : kAllRoles) doc["backends"][std::string(role_name(r))] = {{"script", rules}};
  return parse_config(doc, {}, dir, ConfigPurpose::kLoop);
}

inline RunHooks stub_hooks() {
  RunHooks h;
  h.trainer = next_checkpoint;
  return h;
}

}  // namespace akd::testing
