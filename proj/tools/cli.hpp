#pragma once

#include <string>
#include <vector>

namespace metasysid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitAssertFailed = 2;

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace metasysid::cli
