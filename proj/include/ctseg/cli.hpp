#pragma once

#include <string>
#include <vector>

namespace ctseg {

// Command-line front end. Subcommands: phantom, preprocess, train, infer,
// evaluate, report. Returns the process exit code: 0 on success, 1 on a
// usage error (unknown flag, missing argument, bad subcommand), 2 when a
// subcommand fails on data, configuration, I/O, or numerics.
int cli_main(int argc, const char* const* argv);

// Same entry point for in-process callers; args exclude the program name.
int cli_main(const std::vector<std::string>& args);

}  // namespace ctseg
