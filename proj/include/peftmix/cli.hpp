// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "peftmix/errors.hpp"

namespace peftmix {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

/// Distinct non-zero status per error category, starting at 3.
int exit_code(ErrorCategory category);

/// Entry point of the command-line tool. args[0] is the program name.
/// Errors are written to `err` as one JSON object per line.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace peftmix
