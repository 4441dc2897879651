#pragma once

#include <iosfwd>

namespace crate::cli {

inline constexpr int kExitValidation = 2;
inline constexpr int kExitConvergence = 3;
inline constexpr int kExitPositivity = 4;
inline constexpr int kExitIo = 5;

/// Runs the `crate` command line. Reports go to `out` unless --out is given;
/// progress and structured errors go to `err`. Returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crate::cli
