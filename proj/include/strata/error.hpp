// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace strata {

/// Base class for every contract violation raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input scale that does not satisfy the patch-size divisibility rules.
class GeometryError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail
}  // namespace strata

#define STRATA_CHECK(cond, ...)                                  \
  do {                                                           \
    if (!(cond)) {                                               \
      throw ::strata::Error(::strata::detail::concat(__VA_ARGS__)); \
    }                                                            \
  } while (false)

#define STRATA_CHECK_SHAPE(cond, ...)                                 \
  do {                                                                \
    if (!(cond)) {                                                    \
      throw ::strata::ShapeError(::strata::detail::concat(__VA_ARGS__)); \
    }                                                                 \
  } while (false)
