#pragma once

// Chat-completion backends. Every role (teacher, referee, generator, student,
// rater) talks to its model through the same ChatBackend interface; what sits
// behind it is either an OpenAI-style HTTP endpoint or a scripted mock.

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "akd/error.hpp"

namespace akd {

enum class Role { kTeacher, kReferee, kGenerator, kStudent, kRater };

inline constexpr std::array<Role, 5> kAllRoles = {Role::kTeacher, Role::kReferee, Role::kGenerator,
                                                  Role::kStudent, Role::kRater};

std::string_view role_name(Role role);
// Throws PreconditionError for anything but the five role names.
Role parse_role(std::string_view name);

struct RoleProfile {
  Role role = Role::kTeacher;
  double temperature = 0.7;
  double top_p = 1.0;
  int n = 1;  // "beam size"; only the first choice is consumed
  int max_tokens = 1024;

  // Field-level problems, empty when valid. `prefix` names the config path.
  std::vector<std::string> problems(std::string_view prefix) const;

  friend bool operator==(const RoleProfile&, const RoleProfile&) = default;
};

// Sampling defaults per role. Teacher, referee and generator follow the
// published per-role API settings; student mirrors the teacher's inference
// settings and rater mirrors the referee.
RoleProfile role_profile(Role role);
RoleProfile role_profile(std::string_view role);

enum class FinishReason { kStop, kLength, kError };

NLOHMANN_JSON_SERIALIZE_ENUM(FinishReason, {
                                               {FinishReason::kStop, "stop"},
                                               {FinishReason::kLength, "length"},
                                               {FinishReason::kError, "error"},
                                           })

struct CompletionResult {
  std::string text;
  FinishReason finish_reason = FinishReason::kStop;
  std::int64_t latency_ms = 0;
  int attempt_count = 1;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  // Throws PreconditionError on empty user text and BackendError once the
  // retry policy gives up.
  virtual CompletionResult complete(const RoleProfile& profile, std::string_view system_text,
                                    std::string_view user_text) = 0;

  // Model name sent with each request. The student is re-pointed here after
  // every trainer run.
  virtual void set_model(std::string model) = 0;
  virtual std::string model() const = 0;
};

struct RetryPolicy {
  int max_attempts = 4;
  int initial_backoff_ms = 500;
  double multiplier = 2.0;
  int max_backoff_ms = 16000;

  // Delay before attempt `attempt + 1`, attempt counted from 1.
  std::chrono::milliseconds backoff(int attempt) const;

  // 408, 429 and 5xx are retried; status 0 stands for a transport failure.
  static bool is_transient(int status);
};

// Client-side pacing shared by all requests of one process. A rate of zero
// disables it.
class TokenBucket {
 public:
  TokenBucket(double requests_per_second, double burst);
  void acquire();

 private:
  double rate_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mu_;
};

struct HttpEndpoint {
  std::string base_url;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env;  // read at request time; header omitted when unset
  int timeout_ms = 60000;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

// {model, messages, temperature, top_p, n, max_tokens}. The system message is
// omitted when system_text is empty.
nlohmann::json build_chat_request(std::string_view model, const RoleProfile& profile,
                                  std::string_view system_text, std::string_view user_text);

class HttpChatBackend final : public ChatBackend {
 public:
  HttpChatBackend(HttpEndpoint endpoint, RetryPolicy retry,
                  std::shared_ptr<TokenBucket> limiter = nullptr, Sleeper sleeper = {});

  CompletionResult complete(const RoleProfile& profile, std::string_view system_text,
                            std::string_view user_text) override;
  void set_model(std::string model) override;
  std::string model() const override;

 private:
  HttpEndpoint endpoint_;
  RetryPolicy retry_;
  std::shared_ptr<TokenBucket> limiter_;
  Sleeper sleeper_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Scripted mock

struct MockRequest {
  Role role;
  std::string_view model;
  std::string_view system_text;
  std::string_view user_text;
  const RoleProfile& profile;
};

using MockResponder = std::function<std::string(const MockRequest&)>;

// First matching rule wins. A rule matches when its role (if any) equals the
// request role, `contains` (if non-empty) occurs in the user text, and the
// regex (if any) finds a match in it.
//
// Reply templates may use:
//   {user} {model} {instruction}   request fields; {instruction} is the task
//                                  text embedded in any of the role templates
//   {int:LO:HI}                    integer in [LO, HI]
//   {words:N}                      N pseudo-words
// The pseudo-random placeholders derive from a hash of the seed, role, model,
// system and user text, so identical requests get identical replies.
struct MockRule {
  std::optional<Role> role;
  std::string contains;
  std::string pattern;
  std::variant<std::string, MockResponder> reply;
  bool fail = false;  // throw BackendError instead of replying
  FinishReason finish_reason = FinishReason::kStop;
};

class MockScript {
 public:
  MockScript() = default;

  MockScript& add(MockRule rule);
  MockScript& on(std::optional<Role> role, std::string reply_template, std::string contains = {});
  MockScript& on(std::optional<Role> role, MockResponder responder, std::string contains = {});

  // {"rules": [{"role", "contains", "regex", "reply", "fail", "finish_reason"}]}
  static MockScript from_json(const nlohmann::json& j);
  static MockScript from_file(const std::filesystem::path& path);

  const MockRule* match(Role role, std::string_view user_text) const;

 private:
  struct Compiled {
    MockRule rule;
    std::optional<std::regex> re;
  };
  std::vector<Compiled> rules_;
};

class UnscriptedRequest : public BackendError {
 public:
  using BackendError::BackendError;
};

CompletionResult mock_complete(const MockScript& script, const MockRequest& request,
                               std::uint64_t seed);

// Ordered record of requests, shared between mocks to check stage ordering.
class CallLog {
 public:
  void record(std::string entry);
  std::vector<std::string> entries() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::vector<std::string> entries_;
};

class MockBackend final : public ChatBackend {
 public:
  MockBackend(Role role, std::shared_ptr<const MockScript> script, std::uint64_t seed = 0,
              std::string model = "mock", std::shared_ptr<CallLog> log = nullptr);

  CompletionResult complete(const RoleProfile& profile, std::string_view system_text,
                            std::string_view user_text) override;
  void set_model(std::string model) override;
  std::string model() const override;

 private:
  Role role_;
  std::shared_ptr<const MockScript> script_;
  std::uint64_t seed_;
  std::string model_;
  std::shared_ptr<CallLog> log_;
  mutable std::mutex mu_;
};

// Task text embedded in a rendered role prompt; the whole text when no known
// template layout is recognized.
std::string_view embedded_instruction(std::string_view user_text);

// Stable 64-bit FNV-1a, used where results must not depend on std::hash.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 14695981039346656037ull);

}  // namespace akd
