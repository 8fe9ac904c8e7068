#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "akd/config.hpp"

namespace akd {

struct TrainerCall {
  std::filesystem::path dataset_path;
  std::string prev_checkpoint;
  std::filesystem::path passthrough_path;  // JSON file holding hook.passthrough
  int iteration = 0;
  std::filesystem::path working_dir;  // subprocess cwd; current dir when empty
};

// Hands a dataset to the external trainer and returns the new checkpoint
// reference.
//
// subprocess: runs `<target> <dataset> <prev_checkpoint> <passthrough.json>`
//   through /bin/sh; the last non-blank stdout line is the checkpoint.
// http: POSTs {dataset_path, prev_checkpoint, passthrough_config, iteration}
//   as JSON to target; the response body's "checkpoint" field is used.
//
// Throws PreconditionError for a missing or empty dataset and TrainerError
// for a nonzero exit, a non-2xx status, or no checkpoint in the output.
std::string invoke_trainer(const TrainerCall& call, const TrainerHookSpec& hook);

std::string shell_quote(std::string_view arg);

}  // namespace akd
