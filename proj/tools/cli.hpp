#pragma once

// Batch front end. Every subcommand writes its artifacts and a manifest.json
// under --out-dir.
//
// Exit codes: 0 success, 1 bad input, 2 fit did not converge (results still
// written), 3 singular model.

#include <iosfwd>
#include <string>
#include <vector>

namespace qafano::cli {

inline constexpr const char* kVersion = "0.1.0";

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// 64-bit FNV-1a of a byte string, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace qafano::cli
