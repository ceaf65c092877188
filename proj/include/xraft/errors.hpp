#pragma once

#include <stdexcept>
#include <string>

namespace xraft {

// Tensor or image dimensions that do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters, config keys or options.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A masked reduction found no pixel to average over.
class NoSupervisablePixels : public std::runtime_error {
 public:
  NoSupervisablePixels() : std::runtime_error("no supervisable pixels") {}
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace xraft
