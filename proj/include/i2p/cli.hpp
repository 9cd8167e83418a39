#pragma once

namespace i2p::cli {

/// Full command-line surface. Returns the process exit code:
/// 0 success, 1 flag/input validation error, 2 runtime failure.
int run(int argc, const char* const* argv);

}  // namespace i2p::cli
