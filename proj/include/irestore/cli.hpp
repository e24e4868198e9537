#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace irestore {

// Command-line front end, split from main() so tests can drive it with an
// argument vector and capture both streams. `args` excludes the program
// name. Returns the process exit code: 0 on success, 1 on usage or runtime
// failure, 2 when train halts on divergence.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace irestore
