// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tslim {

/// Shape or argument mismatch between operands.
class DimError : public std::invalid_argument {
public:
  explicit DimError(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed or unreadable on-disk data (WTS/TKF headers, truncation, ...).
class FormatError : public std::runtime_error {
public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure: non-convergence, non-finite values, divergence.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tslim
