#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hgpmil::cli {

/// Runs one subcommand. Returns 0 on success, 1 on a runtime or data error
/// (message on `err`), 2 on a usage error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Same, with arguments given without the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace hgpmil::cli
