#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mdlm {

/// Entry point of the `mdlm` tool. `args` excludes the program name. Returns the process exit
/// status: 0 ok, 1 configuration error, 2 model or protocol error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mdlm
