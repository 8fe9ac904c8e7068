#include "akd/trainer.hpp"

#include <array>
#include <atomic>
#include <cstdio>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "akd/core.hpp"
#include "akd/jsonl.hpp"

namespace akd {

namespace fs = std::filesystem;

std::string shell_quote(std::string_view arg) {
  std::string out = "'";
  for (char c : arg) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out.push_back(c);
    }
  }
  out.push_back('\'');
  return out;
}

namespace {

std::string last_nonblank_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) last = std::string(trim(line));
  }
  return last;
}

std::string run_subprocess(const TrainerCall& call, const TrainerHookSpec& hook) {
  static std::atomic<int> counter{0};
  const fs::path err_path = fs::temp_directory_path() /
                            ("akd-trainer-" + std::to_string(::getpid()) + "-" +
                             std::to_string(counter++) + ".stderr");
  std::string cmd;
  if (!call.working_dir.empty()) cmd = "cd " + shell_quote(call.working_dir.string()) + " && ";
  cmd += hook.target + " " + shell_quote(fs::absolute(call.dataset_path).string()) + " " +
         shell_quote(call.prev_checkpoint) + " " +
         shell_quote(fs::absolute(call.passthrough_path).string()) + " 2>" +
         shell_quote(err_path.string());

  spdlog::info("trainer: {}", hook.target);
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw TrainerError("cannot start trainer: " + hook.target);
  std::string out;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int status = ::pclose(pipe);

  std::string err;
  if (fs::exists(err_path)) {
    err = read_file(err_path);
    fs::remove(err_path);
  }
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    const int code = (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
    throw TrainerError("trainer exited with status " + std::to_string(code), out + err);
  }
  std::string ckpt = last_nonblank_line(out);
  if (ckpt.empty()) throw TrainerError("trainer printed no checkpoint reference", out + err);
  return ckpt;
}

std::string run_http(const TrainerCall& call, const TrainerHookSpec& hook) {
  // Split scheme://host[:port] from the path.
  const auto scheme_end = hook.target.find("://");
  const auto path_start =
      hook.target.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string base = hook.target.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : hook.target.substr(path_start);

  const nlohmann::json body = {{"dataset_path", fs::absolute(call.dataset_path).string()},
                               {"prev_checkpoint", call.prev_checkpoint},
                               {"passthrough_config", hook.passthrough},
                               {"iteration", call.iteration}};
  httplib::Client client(base);
  client.set_read_timeout(std::chrono::hours(24));
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) throw TrainerError("trainer endpoint unreachable: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw TrainerError("trainer endpoint returned HTTP " + std::to_string(res->status), res->body);
  }
  const auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("checkpoint") || !reply["checkpoint"].is_string() ||
      reply["checkpoint"].get<std::string>().empty()) {
    throw TrainerError("trainer response lacks a \"checkpoint\" string", res->body);
  }
  return reply["checkpoint"].get<std::string>();
}

}  // namespace

std::string invoke_trainer(const TrainerCall& call, const TrainerHookSpec& hook) {
  std::error_code ec;
  if (!fs::is_regular_file(call.dataset_path, ec) || fs::file_size(call.dataset_path, ec) == 0) {
    throw PreconditionError("training dataset missing or empty: " + call.dataset_path.string());
  }
  if (hook.target.empty()) throw PreconditionError("trainer target is empty");
  return hook.kind == TrainerKind::kHttp ? run_http(call, hook) : run_subprocess(call, hook);
}

}  // namespace akd
