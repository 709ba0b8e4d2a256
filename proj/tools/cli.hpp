#pragma once

// Command-line front end. `run` parses argv, resolves the configuration
// (flags over --config JSON over defaults), writes the command's artifacts
// and returns the process exit code: 0 success, 1 usage error, 2 domain
// error, 3 failed acceptance checks under `verify --strict`.

#include <iosfwd>

namespace opq::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace opq::cli
