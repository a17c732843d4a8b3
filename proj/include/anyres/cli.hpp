#pragma once

namespace anyres {

// Entry point for the command-line driver. Subcommands: train, eval,
// calibrate, report, dump-bn, dump-ratios. Returns 0 on success, 2 on usage
// errors, 1 on runtime errors.
int cli_main(int argc, const char* const* argv);

}  // namespace anyres
