#pragma once

namespace pcdf {

// Entry point for the `pcdf` tool. Returns the process exit code: 0 on
// success, 1 on failures (failed sample ids go to stderr), 2 on usage errors.
int run_cli(int argc, char** argv);

}  // namespace pcdf
