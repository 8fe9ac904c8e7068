#include "akd/backends.hpp"

#include <charconv>

#include "akd/jsonl.hpp"

namespace akd {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string pseudo_word(std::uint64_t h) {
  static constexpr std::string_view kConsonants = "bcdfghjklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::string word;
  const int syllables = 2 + static_cast<int>(h % 2);
  h /= 2;
  for (int i = 0; i < syllables; ++i) {
    word.push_back(kConsonants[h % kConsonants.size()]);
    h /= kConsonants.size();
    word.push_back(kVowels[h % kVowels.size()]);
    h /= kVowels.size();
  }
  return word;
}

std::optional<long> to_long(std::string_view s) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string render_reply(std::string_view tmpl, const MockRequest& req, std::uint64_t base) {
  std::string out;
  std::uint64_t ordinal = 0;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] != '{') {
      out.push_back(tmpl[i++]);
      continue;
    }
    const auto close = tmpl.find('}', i);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    const std::string_view key = tmpl.substr(i + 1, close - i - 1);
    bool handled = true;
    if (key == "user") {
      out.append(req.user_text);
    } else if (key == "model") {
      out.append(req.model);
    } else if (key == "instruction") {
      out.append(embedded_instruction(req.user_text));
    } else if (key.starts_with("int:")) {
      const auto rest = key.substr(4);
      const auto colon = rest.find(':');
      auto lo = to_long(rest.substr(0, colon));
      auto hi = colon == std::string_view::npos ? std::nullopt : to_long(rest.substr(colon + 1));
      if (lo && hi && *lo <= *hi) {
        const auto span = static_cast<std::uint64_t>(*hi - *lo + 1);
        out += std::to_string(*lo + static_cast<long>(splitmix64(base + ++ordinal) % span));
      } else {
        handled = false;
      }
    } else if (key.starts_with("words:")) {
      auto n = to_long(key.substr(6));
      if (n && *n >= 0) {
        for (long w = 0; w < *n; ++w) {
          if (w) out.push_back(' ');
          out += pseudo_word(splitmix64(base + ++ordinal));
        }
      } else {
        handled = false;
      }
    } else {
      handled = false;
    }
    if (!handled) out.append(tmpl.substr(i, close - i + 1));
    i = close + 1;
  }
  return out;
}

std::string_view between(std::string_view text, std::string_view open, std::string_view close) {
  const auto start = text.find(open);
  if (start == std::string_view::npos) return {};
  const auto body = start + open.size();
  const auto end = text.find(close, body);
  if (end == std::string_view::npos) return {};
  return text.substr(body, end - body);
}

}  // namespace

std::string_view embedded_instruction(std::string_view user_text) {
  static constexpr std::pair<std::string_view, std::string_view> kLayouts[] = {
      {"### Instruction:\n", "\n\n### Response:"},
      {"#Given Instruction#:\n", "\n\n#Created Instruction#:"},
      {"[Instruction]\n", "\n\n[The Start of Assistant 1's Answer]"},
  };
  for (auto [open, close] : kLayouts) {
    if (auto found = between(user_text, open, close); !found.empty()) return found;
  }
  return user_text;
}

MockScript& MockScript::add(MockRule rule) {
  Compiled c{std::move(rule), std::nullopt};
  if (!c.rule.pattern.empty()) c.re.emplace(c.rule.pattern);
  rules_.push_back(std::move(c));
  return *this;
}

MockScript& MockScript::on(std::optional<Role> role, std::string reply_template,
                           std::string contains) {
  MockRule r;
  r.role = role;
  r.contains = std::move(contains);
  r.reply = std::move(reply_template);
  return add(std::move(r));
}

MockScript& MockScript::on(std::optional<Role> role, MockResponder responder,
                           std::string contains) {
  MockRule r;
  r.role = role;
  r.contains = std::move(contains);
  r.reply = std::move(responder);
  return add(std::move(r));
}

MockScript MockScript::from_json(const nlohmann::json& j) {
  MockScript script;
  try {
    for (const auto& r : j.at("rules")) {
      MockRule rule;
      if (r.contains("role")) rule.role = parse_role(r["role"].get<std::string>());
      rule.contains = r.value("contains", std::string{});
      rule.pattern = r.value("regex", std::string{});
      rule.reply = r.value("reply", std::string{});
      rule.fail = r.value("fail", false);
      if (r.contains("finish_reason")) rule.finish_reason = r["finish_reason"].get<FinishReason>();
      script.add(std::move(rule));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError({std::string("mock script: ") + e.what()});
  } catch (const std::regex_error& e) {
    throw ConfigError({std::string("mock script: bad regex: ") + e.what()});
  } catch (const PreconditionError& e) {
    throw ConfigError({std::string("mock script: ") + e.what()});
  }
  return script;
}

MockScript MockScript::from_file(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({"mock script " + path.string() + ": " + e.what()});
  } catch (const StateError& e) {
    throw ConfigError({std::string("mock script: ") + e.what()});
  }
}

const MockRule* MockScript::match(Role role, std::string_view user_text) const {
  for (const auto& c : rules_) {
    if (c.rule.role && *c.rule.role != role) continue;
    if (!c.rule.contains.empty() && user_text.find(c.rule.contains) == std::string_view::npos) {
      continue;
    }
    if (c.re && !std::regex_search(user_text.begin(), user_text.end(), *c.re)) continue;
    return &c.rule;
  }
  return nullptr;
}

CompletionResult mock_complete(const MockScript& script, const MockRequest& request,
                               std::uint64_t seed) {
  if (request.user_text.empty()) throw PreconditionError("user text is empty");
  const MockRule* rule = script.match(request.role, request.user_text);
  if (!rule) {
    throw UnscriptedRequest("unscripted request for role " + std::string(role_name(request.role)) +
                            ": " + std::string(request.user_text.substr(0, 80)));
  }
  if (rule->fail) throw BackendError("scripted failure", 503);

  std::uint64_t h = fnv1a64(std::to_string(seed));
  h = fnv1a64(role_name(request.role), h);
  h = fnv1a64(request.model, h);
  h = fnv1a64(request.system_text, h);
  h = fnv1a64(request.user_text, h);

  CompletionResult result;
  if (const auto* tmpl = std::get_if<std::string>(&rule->reply)) {
    result.text = render_reply(*tmpl, request, h);
  } else {
    result.text = std::get<MockResponder>(rule->reply)(request);
  }
  result.finish_reason = rule->finish_reason;
  result.attempt_count = 1;
  return result;
}

MockBackend::MockBackend(Role role, std::shared_ptr<const MockScript> script, std::uint64_t seed,
                         std::string model, std::shared_ptr<CallLog> log)
    : role_(role),
      script_(std::move(script)),
      seed_(seed),
      model_(std::move(model)),
      log_(std::move(log)) {}

CompletionResult MockBackend::complete(const RoleProfile& profile, std::string_view system_text,
                                       std::string_view user_text) {
  std::lock_guard lock(mu_);
  if (log_) log_->record(std::string(role_name(role_)));
  return mock_complete(*script_, MockRequest{role_, model_, system_text, user_text, profile}, seed_);
}

void MockBackend::set_model(std::string model) {
  std::lock_guard lock(mu_);
  model_ = std::move(model);
}

std::string MockBackend::model() const {
  std::lock_guard lock(mu_);
  return model_;
}

}  // namespace akd
