#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace portraitid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingInput = 3;
inline constexpr int kExitContract = 4;

/// Runs one pipeline command. `args` excludes the program name, e.g.
/// {"--config", "paper.cfg", "--out", "run", "synth"}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace portraitid::cli
