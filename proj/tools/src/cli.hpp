#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace normap::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kInvalidInput = 2;
inline constexpr int kNumericalFailure = 3;

/// Runs one normap command. Data goes to files only; `out` receives help
/// text, `err` progress and a single machine-readable line on failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience overload; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace normap::cli
