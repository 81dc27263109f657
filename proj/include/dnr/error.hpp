// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dnr {

// Caller broke a precondition (bad shape, out-of-range label, empty set, ...).
class contract_violation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced or would produce a non-finite value.
class numeric_fault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw contract_violation(message);
}

}  // namespace dnr
