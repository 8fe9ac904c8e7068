#include "akd/backends.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace akd {

std::string_view role_name(Role role) {
  switch (role) {
    case Role::kTeacher: return "teacher";
    case Role::kReferee: return "referee";
    case Role::kGenerator: return "generator";
    case Role::kStudent: return "student";
    case Role::kRater: return "rater";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  for (Role r : kAllRoles) {
    if (role_name(r) == name) return r;
  }
  throw PreconditionError("unknown role: " + std::string(name));
}

std::vector<std::string> RoleProfile::problems(std::string_view prefix) const {
  std::vector<std::string> out;
  const std::string p(prefix);
  if (!(temperature >= 0.0)) out.push_back(p + ".temperature: must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) out.push_back(p + ".top_p: must lie in (0, 1]");
  if (n < 1) out.push_back(p + ".n: must be >= 1");
  if (max_tokens < 1) out.push_back(p + ".max_tokens: must be >= 1");
  return out;
}

RoleProfile role_profile(Role role) {
  switch (role) {
    case Role::kTeacher: return {role, 0.7, 1.0, 1, 1024};
    case Role::kReferee: return {role, 0.2, 1.0, 1, 512};
    case Role::kGenerator: return {role, 1.0, 1.0, 1, 512};
    case Role::kStudent: return {role, 0.7, 1.0, 1, 1024};
    case Role::kRater: return {role, 0.2, 1.0, 1, 512};
  }
  throw PreconditionError("unknown role");
}

RoleProfile role_profile(std::string_view role) { return role_profile(parse_role(role)); }

std::chrono::milliseconds RetryPolicy::backoff(int attempt) const {
  const double raw = initial_backoff_ms * std::pow(multiplier, std::max(0, attempt - 1));
  return std::chrono::milliseconds(
      static_cast<std::int64_t>(std::min<double>(raw, max_backoff_ms)));
}

bool RetryPolicy::is_transient(int status) {
  return status == 0 || status == 408 || status == 429 || (status >= 500 && status <= 599);
}

TokenBucket::TokenBucket(double requests_per_second, double burst)
    : rate_(requests_per_second),
      capacity_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
  if (rate_ <= 0.0) return;
  for (;;) {
    std::chrono::duration<double> wait{};
    {
      std::lock_guard lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      const std::chrono::duration<double> elapsed = now - last_;
      last_ = now;
      tokens_ = std::min(capacity_, tokens_ + elapsed.count() * rate_);
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
    }
    std::this_thread::sleep_for(wait);
  }
}

void CallLog::record(std::string entry) {
  std::lock_guard lock(mu_);
  entries_.push_back(std::move(entry));
}

std::vector<std::string> CallLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

void CallLog::clear() {
  std::lock_guard lock(mu_);
  entries_.clear();
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t h) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace akd
