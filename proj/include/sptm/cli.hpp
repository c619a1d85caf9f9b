#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sptm::cli {

/// Process exit codes; each failure class has its own.
enum ExitCode : int {
  kOk = 0,
  kError = 1,
  kUsage = 2,
  kIo = 3,
  kFormat = 4,
  kShape = 5,
  kCheckFailed = 6,
};

/// Entry point behind the `sptm` binary. Subcommands: train, rerank, eval,
/// gradcheck, synthgen, tune-lambda, export-embeddings.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads `key=value` lines ('#' comments allowed) and appends `--key=value`
/// for every key not already given on the command line.
std::vector<std::string> merge_config(const std::vector<std::string>& args, const std::string& config_text);

}  // namespace sptm::cli
