#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace msam::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kCheckFailed = 3,
};

// Runs one command. `args` excludes the program name. Human-readable tables
// and the machine-readable result block go to `out`; usage text, error
// messages and (with --verbose) timings go to `err`.
//
// Result blocks look like
//   BEGIN RESULT
//   key=value
//   END RESULT
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msam::cli
