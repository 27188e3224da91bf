#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bevloc {

// Base of every error the library throws.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape mismatch, bad parameter).
class ContractError : public Error {
public:
  using Error::Error;
};

// Singular matrices, points at infinity, collinear corners.
class DegenerateError : public Error {
public:
  using Error::Error;
};

// Input outside the domain of a projection (e.g. Mercator near the poles).
class DomainError : public Error {
public:
  using Error::Error;
};

// Unreadable or malformed files.
class IoError : public Error {
public:
  using Error::Error;
};

inline void require(bool cond, std::string_view what) {
  if (!cond) throw ContractError(std::string(what));
}

} // namespace bevloc
