#pragma once

#include <iosfwd>

namespace xret {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Entry point for the `xret` tool: gen-synthetic, train, eval, diag, export-proj.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xret
