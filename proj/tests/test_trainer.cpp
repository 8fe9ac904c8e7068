#include <fstream>

#include <gtest/gtest.h>

#include "akd/error.hpp"
#include "akd/jsonl.hpp"
#include "akd/trainer.hpp"
#include "fake_server.hpp"
#include "support.hpp"

namespace akd {
namespace {

using nlohmann::json;
using testing::FakeServer;
using testing::TempDir;

struct Fixture {
  TempDir dir;
  TrainerCall call;

  Fixture() {
    std::ofstream(dir / "data.jsonl") << "{\"instruction\":\"a\",\"response\":\"b\"}\n";
    std::ofstream(dir / "pass.json") << "{\"epochs\": 3}";
    call.dataset_path = dir / "data.jsonl";
    call.passthrough_path = dir / "pass.json";
    call.prev_checkpoint = "base";
    call.iteration = 1;
    call.working_dir = dir.path();
  }

  void script(const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << "#!/bin/sh\n" << body;
    std::filesystem::permissions(dir / name, std::filesystem::perms::owner_all);
  }
};

TrainerHookSpec subprocess(const std::string& target) {
  return {TrainerKind::kSubprocess, target, json::object()};
}

TEST(ShellQuote, SurvivesTheShell) {
  EXPECT_EQ(shell_quote("plain"), "'plain'");
  EXPECT_EQ(shell_quote("it's"), "'it'\\''s'");
}

TEST(SubprocessTrainer, StubScriptAdvancesCheckpoint) {
  Fixture f;
  std::filesystem::copy_file(testing::source_dir() / "tests/fixtures/stub_trainer.sh",
                             f.dir / "stub.sh");
  EXPECT_EQ(invoke_trainer(f.call, subprocess("./stub.sh")), "ckpt-1");
  f.call.prev_checkpoint = "ckpt-4";
  EXPECT_EQ(invoke_trainer(f.call, subprocess("./stub.sh")), "ckpt-5");
}

TEST(SubprocessTrainer, ReceivesArgumentsAndUsesLastLine) {
  Fixture f;
  f.script("t.sh", "echo \"$1\" > args.txt\necho \"$2\" >> args.txt\necho \"$3\" >> args.txt\n"
                   "echo progress\necho 'my ckpt'\necho\n");
  f.call.prev_checkpoint = "prev with space";
  EXPECT_EQ(invoke_trainer(f.call, subprocess("./t.sh")), "my ckpt");
  const auto args = read_file(f.dir / "args.txt");
  EXPECT_EQ(args, std::filesystem::absolute(f.call.dataset_path).string() + "\nprev with space\n" +
                      std::filesystem::absolute(f.call.passthrough_path).string() + "\n");
}

TEST(SubprocessTrainer, NonzeroExitCarriesOutput) {
  Fixture f;
  f.script("t.sh", "echo partial\necho 'CUDA out of memory' >&2\nexit 3\n");
  try {
    invoke_trainer(f.call, subprocess("./t.sh"));
    FAIL() << "expected TrainerError";
  } catch (const TrainerError& e) {
    EXPECT_NE(e.captured_output().find("CUDA out of memory"), std::string::npos);
    EXPECT_NE(e.captured_output().find("partial"), std::string::npos);
    EXPECT_EQ(e.exit_code(), ExitCode::kTrainer);
  }
}

TEST(SubprocessTrainer, EmptyOutputIsTrainerError) {
  Fixture f;
  f.script("t.sh", "exit 0\n");
  EXPECT_THROW(invoke_trainer(f.call, subprocess("./t.sh")), TrainerError);
}

TEST(Trainer, MissingOrEmptyDatasetIsPrecondition) {
  Fixture f;
  f.script("t.sh", "echo c\n");
  f.call.dataset_path = f.dir / "nope.jsonl";
  EXPECT_THROW(invoke_trainer(f.call, subprocess("./t.sh")), PreconditionError);
  std::ofstream(f.dir / "empty.jsonl");
  f.call.dataset_path = f.dir / "empty.jsonl";
  EXPECT_THROW(invoke_trainer(f.call, subprocess("./t.sh")), PreconditionError);
  f.call.dataset_path = f.dir / "data.jsonl";
  EXPECT_THROW(invoke_trainer(f.call, subprocess("")), PreconditionError);
}

TEST(HttpTrainer, PostsJobAndReadsCheckpoint) {
  Fixture f;
  FakeServer server;
  json seen;
  server.server().Post("/train", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    res.set_content("{\"checkpoint\": \"s3://ckpt/7\"}", "application/json");
  });
  TrainerHookSpec hook{TrainerKind::kHttp, server.url() + "/train", {{"epochs", 3}}};
  f.call.iteration = 2;
  EXPECT_EQ(invoke_trainer(f.call, hook), "s3://ckpt/7");
  EXPECT_EQ(seen["prev_checkpoint"], "base");
  EXPECT_EQ(seen["iteration"], 2);
  EXPECT_EQ(seen["passthrough_config"]["epochs"], 3);
  EXPECT_EQ(seen["dataset_path"], std::filesystem::absolute(f.call.dataset_path).string());
}

TEST(HttpTrainer, ErrorStatusOrMissingCheckpointIsTrainerError) {
  Fixture f;
  FakeServer server;
  server.server().Post("/fail", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content("trainer crashed", "text/plain");
  });
  server.server().Post("/empty", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"status\": \"ok\"}", "application/json");
  });
  try {
    invoke_trainer(f.call, {TrainerKind::kHttp, server.url() + "/fail", json::object()});
    FAIL() << "expected TrainerError";
  } catch (const TrainerError& e) {
    EXPECT_NE(e.captured_output().find("trainer crashed"), std::string::npos);
  }
  EXPECT_THROW(invoke_trainer(f.call, {TrainerKind::kHttp, server.url() + "/empty", json::object()}),
               TrainerError);
}

}  // namespace
}  // namespace akd
