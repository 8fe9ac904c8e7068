#pragma once

#include <ostream>

namespace akd::cli {

// Entry point of the `akd` tool, with output streams injectable for tests.
// Returns the process exit code; errors also print one JSON object
// {"error": {"kind", "exit_code", "message", "issues"?}} as the last line
// on `err`.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace akd::cli
