// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <string>

namespace tslim {

/// Fixed full-precision formatting (17 significant digits) so CSV output
/// diffs are stable across runs.
inline std::string full_precision(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace tslim
