#pragma once

#include <iosfwd>

namespace cfstab {

// cfstab <subcommand> --config PATH [--override k=v]... --out DIR [--threads N]
// Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cfstab
