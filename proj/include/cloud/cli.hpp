#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cloud::cli {

/// Subcommands: collect | train | plan | imitate | eval | gradcheck.
/// Returns 0 on success, 2 for usage or configuration errors, 1 for runtime
/// failures. Errors are reported as a single "error: <kind>: <message>" line.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, const char* const* argv);

}  // namespace cloud::cli
