#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cmwnet::cli {

/// Runs one command (args exclude the program name) and returns its exit
/// code: 0 success, 2 usage or configuration error, 3 data error,
/// 4 numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cmwnet::cli
