// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/errors.hpp"

namespace peftmix {

std::string_view category_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::contract: return "contract";
    case ErrorCategory::infeasible_target: return "infeasible_target";
    case ErrorCategory::search_failure: return "search_failure";
    case ErrorCategory::metric: return "metric";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

}  // namespace peftmix
