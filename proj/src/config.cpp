#include "akd/config.hpp"

#include <cmath>
#include <cstdlib>

#include "akd/jsonl.hpp"

namespace akd {

using nlohmann::json;

namespace {

std::string_view trainer_kind_name(TrainerKind k) {
  return k == TrainerKind::kHttp ? "http" : "subprocess";
}

std::string_view training_mode_name(TrainingMode m) {
  return m == TrainingMode::kCumulative ? "cumulative" : "incremental";
}

std::string default_model(Role role) {
  switch (role) {
    case Role::kTeacher:
    case Role::kReferee:
    case Role::kGenerator: return "gpt-3.5-turbo";
    case Role::kRater: return "gpt-4";
    case Role::kStudent: return "";
  }
  return "";
}

// Values below these paths are opaque blobs, not config keys.
bool is_free_form(const std::string& path) {
  return path == "trainer.passthrough" ||
         (path.starts_with("backends.") && path.ends_with(".script"));
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void interpolate_env(json& j, const std::string& path, std::vector<std::string>& issues) {
  if (j.is_object()) {
    for (auto& [k, v] : j.items()) interpolate_env(v, join(path, k), issues);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) interpolate_env(j[i], path, issues);
  } else if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s.find("${") == std::string::npos) return;
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
      const auto open = s.find("${", i);
      if (open == std::string::npos) {
        out.append(s, i, std::string::npos);
        break;
      }
      const auto close = s.find('}', open);
      if (close == std::string::npos) {
        out.append(s, i, std::string::npos);
        break;
      }
      out.append(s, i, open - i);
      const std::string var = s.substr(open + 2, close - open - 2);
      if (const char* val = std::getenv(var.c_str())) {
        out += val;
      } else {
        issues.push_back(path + ": environment variable " + var + " is not set");
      }
      i = close + 1;
    }
    j = out;
  }
}

void merge_checked(json& target, const json& user, const std::string& path,
                   std::vector<std::string>& issues) {
  if (!user.is_object()) {
    issues.push_back((path.empty() ? std::string("config") : path) + ": expected an object");
    return;
  }
  for (const auto& [key, value] : user.items()) {
    const std::string here = join(path, key);
    if (!target.contains(key)) {
      issues.push_back(here + ": unknown key");
      continue;
    }
    json& slot = target[key];
    if (slot.is_object() && !is_free_form(here)) {
      merge_checked(slot, value, here, issues);
    } else {
      slot = value;
    }
  }
}

class Reader {
 public:
  Reader(const json& root, std::vector<std::string>& issues) : root_(root), issues_(issues) {}

  template <typename T>
  void read(const std::string& path, T& out) {
    const json* node = &root_;
    std::size_t start = 0;
    while (start <= path.size()) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
      if (!node->is_object() || !node->contains(key)) return;  // keep default
      node = &(*node)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!node->is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!node->is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (node->is_number_integer() && !node->is_number_unsigned() && node->get<long long>() < 0) {
            throw std::invalid_argument("expected a non-negative integer");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!node->is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!node->is_string()) throw std::invalid_argument("expected a string");
      }
      out = node->get<T>();
    } catch (const std::exception& e) {
      issues_.push_back(path + ": " + e.what());
    }
  }

 private:
  const json& root_;
  std::vector<std::string>& issues_;
};

void check(bool ok, std::vector<std::string>& issues, const std::string& msg) {
  if (!ok) issues.push_back(msg);
}

template <typename T>
std::string shown(T v) {
  json j = v;
  return j.dump();
}

}  // namespace

std::filesystem::path Config::resolve(const std::filesystem::path& p) const {
  if (p.empty() || p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

json config_to_json(const Config& c) {
  json roles = json::object();
  json backends = json::object();
  for (Role r : kAllRoles) {
    const auto& p = c.profile(r);
    roles[std::string(role_name(r))] = {
        {"temperature", p.temperature}, {"top_p", p.top_p}, {"n", p.n}, {"max_tokens", p.max_tokens}};
    const auto& b = c.backend(r);
    backends[std::string(role_name(r))] = {{"kind", b.kind},
                                           {"url", b.url},
                                           {"path", b.path},
                                           {"model", b.model},
                                           {"api_key_env", b.api_key_env},
                                           {"timeout_ms", b.timeout_ms},
                                           {"script", b.script}};
  }
  return json{
      {"seed_file", c.seed_file},
      {"tau", c.tau},
      {"n_per_iteration", c.n_per_iteration},
      {"ratio_hard", c.ratio_hard},
      {"ratio_easy", c.ratio_easy},
      {"rouge_threshold", c.rouge_threshold},
      {"iterations", c.iterations},
      {"seed", c.seed},
      {"concurrency", c.concurrency},
      {"attempt_budget_factor", c.attempt_budget_factor},
      {"referee_parse_retries", c.referee_parse_retries},
      {"max_drop_fraction", c.max_drop_fraction},
      {"max_unscored_fraction", c.max_unscored_fraction},
      {"strict_referee_parse", c.strict_referee_parse},
      {"cache_teacher_responses", c.cache_teacher_responses},
      {"training_mode", training_mode_name(c.training_mode)},
      {"final_imitation", c.final_imitation},
      {"equilibrium_floor", c.equilibrium_floor},
      {"templates_dir", c.templates_dir},
      {"retry",
       {{"max_attempts", c.retry.max_attempts},
        {"initial_backoff_ms", c.retry.initial_backoff_ms},
        {"multiplier", c.retry.multiplier},
        {"max_backoff_ms", c.retry.max_backoff_ms}}},
      {"rate_limit", {{"requests_per_second", c.rate_limit_rps}, {"burst", c.rate_limit_burst}}},
      {"roles", roles},
      {"backends", backends},
      {"student", {{"initial_checkpoint", c.student_initial_checkpoint}}},
      {"trainer",
       {{"kind", trainer_kind_name(c.trainer.kind)},
        {"target", c.trainer.target},
        {"passthrough", c.trainer.passthrough}}},
      {"eval", {{"pairwise_evidence_k", c.pairwise_evidence_k}}},
  };
}

namespace {

Config default_config() {
  Config c;
  for (Role r : kAllRoles) c.backend(r).model = default_model(r);
  c.trainer.passthrough = {{"batch_size", 128},       {"learning_rate", 2e-5},
                           {"epochs", 3},             {"max_length", 1024},
                           {"optimizer", "AdamW"},    {"scheduler", "cosine"},
                           {"weight_decay", 0},       {"warmup_ratio", 0.03}};
  return c;
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError({"--set " + assignment + ": expected key=value"});
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError({key + ": unknown key"});
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_string()) {
    *node = raw;
  } else {
    *node = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (node->is_discarded()) *node = raw;
  }
}

Config parse_config(const json& doc, const std::vector<std::string>& overrides,
                    const std::filesystem::path& base_dir, ConfigPurpose purpose) {
  std::vector<std::string> issues;
  json user = doc;
  interpolate_env(user, "", issues);
  json merged = config_to_json(default_config());
  merge_checked(merged, user, "", issues);
  for (const auto& o : overrides) {
    try {
      apply_override(merged, o);
    } catch (const ConfigError& e) {
      issues.insert(issues.end(), e.issues().begin(), e.issues().end());
    }
  }

  Config c = default_config();
  c.base_dir = base_dir;
  Reader rd(merged, issues);
  rd.read("seed_file", c.seed_file);
  rd.read("tau", c.tau);
  rd.read("n_per_iteration", c.n_per_iteration);
  rd.read("ratio_hard", c.ratio_hard);
  rd.read("ratio_easy", c.ratio_easy);
  rd.read("rouge_threshold", c.rouge_threshold);
  rd.read("iterations", c.iterations);
  rd.read("seed", c.seed);
  rd.read("concurrency", c.concurrency);
  rd.read("attempt_budget_factor", c.attempt_budget_factor);
  rd.read("referee_parse_retries", c.referee_parse_retries);
  rd.read("max_drop_fraction", c.max_drop_fraction);
  rd.read("max_unscored_fraction", c.max_unscored_fraction);
  rd.read("strict_referee_parse", c.strict_referee_parse);
  rd.read("cache_teacher_responses", c.cache_teacher_responses);
  std::string mode = "incremental";
  rd.read("training_mode", mode);
  rd.read("final_imitation", c.final_imitation);
  rd.read("equilibrium_floor", c.equilibrium_floor);
  rd.read("templates_dir", c.templates_dir);
  rd.read("retry.max_attempts", c.retry.max_attempts);
  rd.read("retry.initial_backoff_ms", c.retry.initial_backoff_ms);
  rd.read("retry.multiplier", c.retry.multiplier);
  rd.read("retry.max_backoff_ms", c.retry.max_backoff_ms);
  rd.read("rate_limit.requests_per_second", c.rate_limit_rps);
  rd.read("rate_limit.burst", c.rate_limit_burst);
  for (Role r : kAllRoles) {
    const std::string rn(role_name(r));
    auto& p = c.profile(r);
    rd.read("roles." + rn + ".temperature", p.temperature);
    rd.read("roles." + rn + ".top_p", p.top_p);
    rd.read("roles." + rn + ".n", p.n);
    rd.read("roles." + rn + ".max_tokens", p.max_tokens);
    auto& b = c.backend(r);
    rd.read("backends." + rn + ".kind", b.kind);
    rd.read("backends." + rn + ".url", b.url);
    rd.read("backends." + rn + ".path", b.path);
    rd.read("backends." + rn + ".model", b.model);
    rd.read("backends." + rn + ".api_key_env", b.api_key_env);
    rd.read("backends." + rn + ".timeout_ms", b.timeout_ms);
    b.script = merged["backends"][rn]["script"];
  }
  rd.read("student.initial_checkpoint", c.student_initial_checkpoint);
  std::string trainer_kind = "subprocess";
  rd.read("trainer.kind", trainer_kind);
  rd.read("trainer.target", c.trainer.target);
  c.trainer.passthrough = merged["trainer"]["passthrough"];
  rd.read("eval.pairwise_evidence_k", c.pairwise_evidence_k);

  // Semantic checks.
  check(std::isfinite(c.tau) && c.tau >= 0.0, issues, "tau: must be >= 0 (got " + shown(c.tau) + ")");
  check(c.n_per_iteration > 0, issues,
        "n_per_iteration: must be > 0 (got " + shown(c.n_per_iteration) + ")");
  check(c.ratio_hard >= 0, issues, "ratio_hard: must be >= 0");
  check(c.ratio_easy >= 0, issues, "ratio_easy: must be >= 0");
  check(c.ratio_hard + c.ratio_easy > 0, issues, "ratio_hard + ratio_easy: must be > 0");
  check(c.rouge_threshold > 0.0 && c.rouge_threshold <= 1.0, issues,
        "rouge_threshold: must lie in (0, 1] (got " + shown(c.rouge_threshold) + ")");
  check(c.iterations >= 1, issues, "iterations: must be >= 1 (got " + shown(c.iterations) + ")");
  check(c.concurrency >= 1, issues, "concurrency: must be >= 1");
  check(c.attempt_budget_factor >= 1, issues, "attempt_budget_factor: must be >= 1");
  check(c.referee_parse_retries >= 0, issues, "referee_parse_retries: must be >= 0");
  check(c.max_drop_fraction >= 0.0 && c.max_drop_fraction <= 1.0, issues,
        "max_drop_fraction: must lie in [0, 1]");
  check(c.max_unscored_fraction >= 0.0 && c.max_unscored_fraction <= 1.0, issues,
        "max_unscored_fraction: must lie in [0, 1]");
  check(c.equilibrium_floor >= 0, issues, "equilibrium_floor: must be >= 0");
  check(c.retry.max_attempts >= 1, issues, "retry.max_attempts: must be >= 1");
  check(c.retry.initial_backoff_ms >= 0, issues, "retry.initial_backoff_ms: must be >= 0");
  check(c.retry.multiplier >= 1.0, issues, "retry.multiplier: must be >= 1");
  check(c.retry.max_backoff_ms >= 0, issues, "retry.max_backoff_ms: must be >= 0");
  check(c.rate_limit_rps >= 0.0, issues, "rate_limit.requests_per_second: must be >= 0");
  check(c.pairwise_evidence_k >= 1, issues, "eval.pairwise_evidence_k: must be >= 1");
  if (mode == "incremental") {
    c.training_mode = TrainingMode::kIncremental;
  } else if (mode == "cumulative") {
    c.training_mode = TrainingMode::kCumulative;
  } else {
    issues.push_back("training_mode: must be \"incremental\" or \"cumulative\"");
  }
  if (trainer_kind == "subprocess") {
    c.trainer.kind = TrainerKind::kSubprocess;
  } else if (trainer_kind == "http") {
    c.trainer.kind = TrainerKind::kHttp;
  } else {
    issues.push_back("trainer.kind: must be \"subprocess\" or \"http\"");
  }
  for (Role r : kAllRoles) {
    const std::string rn(role_name(r));
    auto problems = c.profile(r).problems("roles." + rn);
    issues.insert(issues.end(), problems.begin(), problems.end());
    const auto& b = c.backend(r);
    if (b.kind == "http") {
      check(!b.url.empty(), issues, "backends." + rn + ".url: required for http backends");
      check(b.timeout_ms > 0, issues, "backends." + rn + ".timeout_ms: must be > 0");
    } else if (b.kind == "mock") {
      const bool has_script =
          (b.script.is_string() && !b.script.get<std::string>().empty()) || b.script.is_object();
      check(has_script, issues,
            "backends." + rn + ".script: mock backends need a script path or inline rules");
    } else {
      issues.push_back("backends." + rn + ".kind: must be \"mock\" or \"http\"");
    }
  }
  if (purpose == ConfigPurpose::kLoop) {
    if (c.seed_file.empty()) {
      issues.push_back("seed_file: required");
    } else if (!std::filesystem::exists(c.resolve(c.seed_file))) {
      issues.push_back("seed_file: " + c.resolve(c.seed_file).string() + " does not exist");
    }
    check(!c.trainer.target.empty(), issues, "trainer.target: required");
  }
  if (!c.templates_dir.empty() && !std::filesystem::is_directory(c.resolve(c.templates_dir))) {
    issues.push_back("templates_dir: " + c.resolve(c.templates_dir).string() +
                     " is not a directory");
  }

  if (!issues.empty()) throw ConfigError(std::move(issues));
  return c;
}

Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                   ConfigPurpose purpose) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const StateError&) {
    throw ConfigError({"config: cannot read " + path.string()});
  }
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError({"config: " + path.string() + " is not valid JSON"});
  return parse_config(doc, overrides, std::filesystem::absolute(path).parent_path(), purpose);
}

BackendSet make_backends(const Config& config, std::shared_ptr<CallLog> log) {
  BackendSet set;
  auto limiter = std::make_shared<TokenBucket>(config.rate_limit_rps, config.rate_limit_burst);
  for (Role r : kAllRoles) {
    const auto& spec = config.backend(r);
    std::string model = spec.model;
    if (r == Role::kStudent) model = config.student_initial_checkpoint;
    std::shared_ptr<ChatBackend> backend;
    if (spec.kind == "http") {
      HttpEndpoint ep{spec.url, spec.path, model, spec.api_key_env, spec.timeout_ms};
      backend = std::make_shared<HttpChatBackend>(ep, config.retry, limiter);
    } else {
      MockScript script = spec.script.is_object()
                              ? MockScript::from_json(spec.script)
                              : MockScript::from_file(config.resolve(spec.script.get<std::string>()));
      backend = std::make_shared<MockBackend>(
          r, std::make_shared<const MockScript>(std::move(script)), config.seed,
          model.empty() ? std::string("mock") : model, log);
    }
    set.by_role[static_cast<std::size_t>(r)] = std::move(backend);
  }
  return set;
}

}  // namespace akd
