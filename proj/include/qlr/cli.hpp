#pragma once

// Command-line front end: `qlr decompose`, `qlr synth`, `qlr sweep`.
// Exit codes: 0 success, 1 numerical failure, 2 flag/validation error.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace qlr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumerical = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// `args` excludes the program name.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);
int main(int argc, char **argv);

/// Inclusive ranges "a..b", plain integers, or comma lists of either.
std::vector<std::uint64_t> parse_seed_list(const std::string &text);
std::vector<std::string> split_list(const std::string &text);

/// QLR_THREADS if set (must be a positive integer), else hardware concurrency.
std::size_t thread_limit();

} // namespace qlr::cli
