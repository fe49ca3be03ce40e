#pragma once

// Command-line front end. Subcommands: split, train, generate, evaluate,
// baseline ann, physchem dump. Each accepts --config FILE (TOML keys named
// after the long flags); explicit flags override the file, which overrides
// the defaults. Every run that writes files also writes one manifest.

#include <iosfwd>
#include <string>
#include <vector>

namespace cdr3gen::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name. Errors are printed to `err` as one JSON
// object {"error": {"kind", "module", "message"}}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace cdr3gen::cli
