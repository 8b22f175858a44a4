#pragma once

// Command-line front end: gen, fit-ocv, identify, train, estimate, evaluate,
// report. Exit codes: 0 success, 2 invalid input or configuration,
// 3 numerical failure.

#include <string>
#include <vector>

namespace hybrid_ecm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

int run_cli(int argc, const char* const* argv);

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args);

/// Parallel scenario cap from HYBRID_ECM_THREADS (>= 1), else the hardware count.
unsigned thread_cap();

}  // namespace hybrid_ecm
