#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gec::cli {

inline constexpr const char* kVersion = "0.1.0";

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;  // missing files, bad data, numeric trouble
inline constexpr int kUsage = 2;    // unknown flags, invalid configuration

/// Runs one invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gec::cli
