#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "akd/backends.hpp"

namespace akd {

struct BackendSpec {
  std::string kind = "mock";  // "mock" | "http"
  std::string url;
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  int timeout_ms = 60000;
  nlohmann::json script = "";  // mock: file path (relative to the config) or inline {"rules": [...]}
};

enum class TrainerKind { kSubprocess, kHttp };

// How the student is actually fine-tuned: an external command or HTTP
// service. `passthrough` is handed over verbatim (batch size, learning
// rate, ...); nothing here interprets it.
struct TrainerHookSpec {
  TrainerKind kind = TrainerKind::kSubprocess;
  std::string target;
  nlohmann::json passthrough = nlohmann::json::object();
};

enum class TrainingMode {
  kIncremental,  // each run sees only the current Train Pool's dataset
  kCumulative,   // each run sees every dataset emitted so far
};

struct Config {
  std::string seed_file;
  double tau = 1.0;
  int n_per_iteration = 6000;
  int ratio_hard = 1;
  int ratio_easy = 1;
  double rouge_threshold = 0.7;
  int iterations = 3;
  std::uint64_t seed = 0;

  int concurrency = 8;
  int attempt_budget_factor = 5;
  int referee_parse_retries = 2;
  double max_drop_fraction = 0.1;
  double max_unscored_fraction = 0.1;
  bool strict_referee_parse = false;
  bool cache_teacher_responses = true;
  TrainingMode training_mode = TrainingMode::kIncremental;
  bool final_imitation = true;
  int equilibrium_floor = 0;
  std::string templates_dir;

  RetryPolicy retry;
  double rate_limit_rps = 0.0;
  double rate_limit_burst = 1.0;

  std::array<RoleProfile, 5> roles = {role_profile(Role::kTeacher), role_profile(Role::kReferee),
                                      role_profile(Role::kGenerator), role_profile(Role::kStudent),
                                      role_profile(Role::kRater)};
  std::array<BackendSpec, 5> backends;
  std::string student_initial_checkpoint = "base";
  TrainerHookSpec trainer;
  int pairwise_evidence_k = 3;

  // Directory relative paths resolve against; not serialized.
  std::filesystem::path base_dir;

  const RoleProfile& profile(Role role) const { return roles[static_cast<std::size_t>(role)]; }
  RoleProfile& profile(Role role) { return roles[static_cast<std::size_t>(role)]; }
  const BackendSpec& backend(Role role) const { return backends[static_cast<std::size_t>(role)]; }
  BackendSpec& backend(Role role) { return backends[static_cast<std::size_t>(role)]; }

  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

nlohmann::json config_to_json(const Config& config);

enum class ConfigPurpose {
  kLoop,  // needs a seed file and a trainer hook
  kStage,
};

// Parses a config document. Unknown keys, wrong types and out-of-range
// values are all reported together in one ConfigError, one line per field.
// `${VAR}` in string values is replaced from the environment.
Config parse_config(const nlohmann::json& doc, const std::vector<std::string>& overrides = {},
                    const std::filesystem::path& base_dir = {},
                    ConfigPurpose purpose = ConfigPurpose::kStage);

Config load_config(const std::filesystem::path& path,
                   const std::vector<std::string>& overrides = {},
                   ConfigPurpose purpose = ConfigPurpose::kStage);

// Applies `key.path=value` to a config document. The key must already exist
// in the full default config.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct BackendSet {
  std::array<std::shared_ptr<ChatBackend>, 5> by_role;

  ChatBackend& at(Role role) const { return *by_role[static_cast<std::size_t>(role)]; }
};

// Mocks of one set share `log` when given. The student starts at
// student_initial_checkpoint.
BackendSet make_backends(const Config& config, std::shared_ptr<CallLog> log = nullptr);

}  // namespace akd
