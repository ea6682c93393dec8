#pragma once

// The qann command line: gen, train, eval, inspect.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace qann::cli {

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Runs one command. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// git-style blob hash: SHA-1 over "blob <size>\0" followed by the bytes.
std::string blob_sha1(const std::string& bytes);
std::string file_blob_sha1(const std::filesystem::path& path);

}  // namespace qann::cli
