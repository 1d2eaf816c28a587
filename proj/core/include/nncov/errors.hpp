#pragma once

#include <stdexcept>
#include <string>

namespace nncov {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An input tensor or parameter has the wrong shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A file on disk is malformed: IDX, model manifest, PGM.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// A configuration value is missing or out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace nncov
