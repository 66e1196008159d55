#pragma once

#include <string>
#include <vector>

#include "lasp/config.hpp"

namespace lasp {

enum ExitCode { exit_ok = 0, exit_failure = 1, exit_usage = 2, exit_data = 3, exit_divergence = 4 };

const std::vector<std::string>& commands();

// <out root>/<out>, where the root is $LASP_OUT_ROOT or the working directory; out defaults to runs/<command>
std::string resolve_run_dir(const std::string& out, const std::string& command);

// Runs one command into run_dir. Throws the library's error types.
void run_command(const std::string& command, const Config& cfg, const std::string& run_dir);

// argv entry point; maps errors to exit codes and prints them to stderr
int run_cli(int argc, const char* const* argv);

}  // namespace lasp
