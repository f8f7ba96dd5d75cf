// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace recap {

/// Entry point of the `recap` command. Exit status: 0 success, 1 runtime
/// failure, 2 bad configuration or command line.
int run_cli(int argc, char** argv);

}  // namespace recap
