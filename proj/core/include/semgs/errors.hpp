#pragma once

#include <stdexcept>
#include <string>

namespace semgs {

/// Caller violated an operation's precondition (shape mismatch, missing input).
class ContractError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Input data is well-formed but carries invalid values (NaN, out-of-range id).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A file does not follow its declared layout.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace semgs
