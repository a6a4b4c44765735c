#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rfbn::cli {

// Exit codes: 0 ok, 1 stage failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace rfbn::cli
