#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace epp::cli {

enum ExitCode : int {
    kOk = 0,
    kIoError = 1,
    kConfigError = 2,
    kAllAborted = 3,
    kUnsupported = 4,
    kVerificationFailed = 5,
};

/// Runs the command line `args` (without the program name). Normal output
/// goes to `out` unless --out names a file; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace epp::cli
