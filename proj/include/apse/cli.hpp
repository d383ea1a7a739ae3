#pragma once

#include <ostream>

namespace apse {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitSolve = 2, kExitIo = 3 };

/// Entry point of the `apse` tool: validate, estimate, synthesize, batch.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace apse
