#pragma once

#include <iosfwd>

namespace avx {

enum ExitCode : int {
    kExitOk = 0,
    kExitValidation = 1,
    kExitUsage = 2,
    kExitNumeric = 3,
    kExitTransport = 4,
};

// Entry point of the `avx` tool. Output goes to the given streams so tests
// can drive commands in-process.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace avx
