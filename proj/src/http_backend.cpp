#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "akd/backends.hpp"

namespace akd {

using nlohmann::json;

json build_chat_request(std::string_view model, const RoleProfile& profile,
                        std::string_view system_text, std::string_view user_text) {
  json messages = json::array();
  if (!system_text.empty()) messages.push_back({{"role", "system"}, {"content", system_text}});
  messages.push_back({{"role", "user"}, {"content", user_text}});
  return json{{"model", model},
              {"messages", std::move(messages)},
              {"temperature", profile.temperature},
              {"top_p", profile.top_p},
              {"n", profile.n},
              {"max_tokens", profile.max_tokens}};
}

HttpChatBackend::HttpChatBackend(HttpEndpoint endpoint, RetryPolicy retry,
                                 std::shared_ptr<TokenBucket> limiter, Sleeper sleeper)
    : endpoint_(std::move(endpoint)),
      retry_(retry),
      limiter_(std::move(limiter)),
      sleeper_(sleeper ? std::move(sleeper)
                       : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })) {
}

void HttpChatBackend::set_model(std::string model) {
  std::lock_guard lock(mu_);
  endpoint_.model = std::move(model);
}

std::string HttpChatBackend::model() const {
  std::lock_guard lock(mu_);
  return endpoint_.model;
}

namespace {

constexpr std::chrono::milliseconds kMaxServerDelay{10 * 60 * 1000};

std::optional<std::chrono::milliseconds> retry_after(const httplib::Response& res) {
  if (!res.has_header("Retry-After")) return std::nullopt;
  const std::string value = res.get_header_value("Retry-After");
  char* end = nullptr;
  const double seconds = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || seconds < 0) return std::nullopt;
  return std::chrono::milliseconds(static_cast<std::int64_t>(seconds * 1000.0));
}

}  // namespace

CompletionResult HttpChatBackend::complete(const RoleProfile& profile, std::string_view system_text,
                                           std::string_view user_text) {
  if (user_text.empty()) throw PreconditionError("user text is empty");
  HttpEndpoint ep;
  {
    std::lock_guard lock(mu_);
    ep = endpoint_;
  }
  const std::string body = build_chat_request(ep.model, profile, system_text, user_text).dump();
  httplib::Headers headers;
  if (!ep.api_key_env.empty()) {
    if (const char* key = std::getenv(ep.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  const auto started = std::chrono::steady_clock::now();
  int last_status = 0;
  std::string last_error;
  const int max_attempts = std::max(1, retry_.max_attempts);
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (limiter_) limiter_->acquire();
    // One client per request: httplib clients are not meant to be shared
    // across threads.
    httplib::Client client(ep.base_url);
    const auto timeout = std::chrono::milliseconds(ep.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    auto res = client.Post(ep.path, headers, body, "application/json");
    std::optional<std::chrono::milliseconds> server_delay;
    if (!res) {
      last_status = 0;
      last_error = httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      CompletionResult out;
      try {
        const json j = json::parse(res->body);
        const json& choice = j.at("choices").at(0);
        out.text = choice.at("message").at("content").get<std::string>();
        const std::string finish = choice.value("finish_reason", std::string("stop"));
        out.finish_reason = finish == "length" ? FinishReason::kLength
                            : finish == "stop" ? FinishReason::kStop
                                               : FinishReason::kError;
      } catch (const json::exception& e) {
        throw BackendError(std::string("malformed chat completion response: ") + e.what(),
                           res->status);
      }
      out.attempt_count = attempt;
      out.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - started)
                           .count();
      return out;
    } else {
      last_status = res->status;
      last_error = res->body.substr(0, 200);
      if (!RetryPolicy::is_transient(res->status)) {
        throw BackendError("chat completion failed with HTTP " + std::to_string(res->status) +
                               ": " + last_error,
                           res->status);
      }
      server_delay = retry_after(*res);
    }
    if (attempt < max_attempts) {
      auto delay = retry_.backoff(attempt);
      // A server-requested wait overrides our own cap; waiting less would
      // only earn another 429.
      if (server_delay) delay = std::min(std::max(delay, *server_delay), kMaxServerDelay);
      spdlog::debug("chat completion attempt {} failed (status {}); retrying in {} ms", attempt,
                    last_status, delay.count());
      sleeper_(delay);
    }
  }
  throw BackendError("chat completion failed after " + std::to_string(max_attempts) +
                         " attempts (last status " + std::to_string(last_status) + "): " +
                         last_error,
                     last_status);
}

}  // namespace akd
