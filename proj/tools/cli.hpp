#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dcem::cli {

/// Runs one command line (without the program name). Returns the exit code:
/// 0 success, 1 runtime failure, 2 usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcem::cli
