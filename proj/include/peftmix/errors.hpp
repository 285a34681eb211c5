// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace peftmix {

enum class ErrorCategory {
  config,
  dimension,
  data,
  numeric,
  contract,
  infeasible_target,
  search_failure,
  metric,
  io,
};

std::string_view category_name(ErrorCategory category);

/// Base of every error raised by the library. The category is what the CLI
/// reports and maps onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define PEFTMIX_DEFINE_ERROR(Name, category_value)                          \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& message) : Error(category_value, message) {} \
  }

PEFTMIX_DEFINE_ERROR(ConfigError, ErrorCategory::config);
PEFTMIX_DEFINE_ERROR(DimensionError, ErrorCategory::dimension);
PEFTMIX_DEFINE_ERROR(DataError, ErrorCategory::data);
PEFTMIX_DEFINE_ERROR(NumericError, ErrorCategory::numeric);
PEFTMIX_DEFINE_ERROR(ContractError, ErrorCategory::contract);
PEFTMIX_DEFINE_ERROR(InfeasibleTargetError, ErrorCategory::infeasible_target);
PEFTMIX_DEFINE_ERROR(MetricError, ErrorCategory::metric);
PEFTMIX_DEFINE_ERROR(IoError, ErrorCategory::io);

#undef PEFTMIX_DEFINE_ERROR

/// Raised when training or architecture search produces a non-finite loss.
class SearchFailure : public Error {
 public:
  SearchFailure(std::size_t step, const std::string& message)
      : Error(ErrorCategory::search_failure, message), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace peftmix
