#pragma once

#include <ostream>

namespace empathia::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

// Entry point of the `empathia` tool: prep, train, eval, generate, serve.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace empathia::cli
