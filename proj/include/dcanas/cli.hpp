#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace dcanas {

/// Process exit codes; stable across versions.
enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_runtime = 3 };

/// Entry point of the `dcanas` tool. Subcommands: search, lug build, eval,
/// sweep, cost. Normal output goes to `out`, diagnostics and progress to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Worker count after applying the DCANAS_THREADS cap (unset or invalid means
/// no cap). Always at least 1.
int capped_parallelism(int requested);

/// Git blob object id of a file: SHA-1 over "blob <size>\0" + contents.
std::string git_blob_hash(const std::filesystem::path& path);

}  // namespace dcanas
