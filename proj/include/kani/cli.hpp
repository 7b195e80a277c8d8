#pragma once

#include <ostream>

namespace kani {

// Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kani
