#pragma once

#include <string>
#include <vector>

namespace cacs::cli {

// exit codes, also listed in --help
constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;  // gradcheck threshold not met
constexpr int kExitUsage = 2;        // bad flags or config values
constexpr int kExitIo = 3;           // missing file / read / write failure
constexpr int kExitFormat = 4;       // malformed file contents
constexpr int kExitDims = 5;         // grid dimension mismatch
constexpr int kExitNumeric = 6;      // non-finite arithmetic
constexpr int kExitStratum = 7;      // empty sampling stratum
constexpr int kExitPlan = 8;         // unsatisfiable phantom plan
constexpr int kExitInternal = 10;

/// Runs one CLI invocation; args exclude the program name.
int run(const std::vector<std::string>& args);

}  // namespace cacs::cli
