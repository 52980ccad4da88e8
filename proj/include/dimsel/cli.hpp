#pragma once

// Command-line front end. `run` takes the arguments after the program name
// and returns the process exit code: 0 success, 1 data error, 2 usage error.

#include <iosfwd>
#include <string>
#include <vector>

namespace dimsel::cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dimsel::cli
