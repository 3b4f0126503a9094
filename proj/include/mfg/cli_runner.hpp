#pragma once

#include <string>
#include <vector>

namespace mfg {

// Entry point shared by the binary and the tests. args excludes argv[0].
// Returns the process exit code: 0 pass, 2 fail verdict, 1 error.
int run_cli(const std::vector<std::string>& args);

}  // namespace mfg
