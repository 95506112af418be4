#pragma once

namespace arnet {

// Full command-line surface; returns the process exit code.
// 0 = success, 1 = usage error, 2 = data/runtime error.
int cli_main(int argc, const char* const* argv);

}  // namespace arnet
