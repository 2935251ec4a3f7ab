#pragma once

#include <stdexcept>
#include <string>

namespace densal {

// Operand shapes are incompatible with an operator.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// A configuration or model description violates its invariants.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// A file does not follow its declared format.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace densal
