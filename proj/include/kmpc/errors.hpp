#pragma once

#include <stdexcept>
#include <string>

namespace kmpc {

/// Bad input: wrong dimensions, out-of-range parameters, malformed files.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Non-finite values, blow-up, or a solver that could not produce a result.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

template <class Derived>
bool all_finite(const Derived& m) {
  return m.allFinite();
}

}  // namespace detail
}  // namespace kmpc
