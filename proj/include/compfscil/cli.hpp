#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace compfscil {

/// Exit codes: 0 success, 1 usage error, 2 data or validation error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace compfscil
