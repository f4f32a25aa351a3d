#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sidecar::cli {

enum ExitCode : int {
  kSuccess = 0,
  kCheckFailure = 1,
  kUsageError = 2,
  kIoError = 3,
  kDataError = 4,
};

/// Runs one subcommand. args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sidecar::cli
