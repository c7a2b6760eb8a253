#pragma once

#include <iosfwd>

namespace patch2loc {

/// Entry point behind the `patch2loc` executable. Returns the process exit
/// code: 0 success, 1 validation error, 2 runtime error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace patch2loc
