#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cak::cli {

/// Name of the corpus index written next to the audio by `ingest`.
inline constexpr const char* kIndexFileName = "cak_index.json";

/// Entry point behind the `cak` executable. args[0] is the program name.
/// 0 on success, 1 on a module error (one `ERR:<CODE>: message` line on
/// `err`), 2 on a usage error (diagnostic plus synopsis).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace cak::cli
