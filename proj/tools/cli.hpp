#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace tapid::cli {

inline constexpr std::uint64_t kDefaultSeed = 7;

/// Runs one command line (without the program name). Returns the process
/// exit status: 0 success, 1 validation or runtime failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tapid::cli
