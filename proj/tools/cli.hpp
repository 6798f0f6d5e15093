#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lightplane::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kParseError = 2;
inline constexpr int kShapeError = 3;

// Runs one command line (args excludes the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lightplane::cli
