#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ndk::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one subcommand. `args` excludes the program name, e.g. {"train", "-c", "train.cfg"}.
/// Returns 0 on success, 1 on usage or configuration errors, 2 on data errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Names of the subcommands in pipeline order.
const std::vector<std::string>& subcommands();

}  // namespace ndk::cli
