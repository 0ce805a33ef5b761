#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace vmus {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Entry point of the `vmus` tool; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Keeps large temporary buffers in the heap instead of fresh mappings.
void tune_allocator();

}  // namespace vmus
