#pragma once

// Command-line front end: synth, train, embed, update, eval, project,
// finetune. Exit codes: 0 ok, 1 configuration/validation, 2 I/O,
// 3 numeric failure.

#include <iosfwd>

namespace lifestream {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitNumeric = 3;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lifestream
