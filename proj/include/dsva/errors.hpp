#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dsva {

// Base class for all library errors. Subclasses map onto CLI exit codes:
// contract/shape/numeric/vocab/generation -> 1, io/format -> 2.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not conform to the operation.
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A precondition on an operation was violated.
class ContractError : public Error {
public:
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// A forward or backward pass produced NaN/Inf.
class NumericError : public Error {
public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Token outside the closed vocabulary.
class VocabError : public Error {
public:
  explicit VocabError(const std::string& msg) : Error(msg) {}
};

// Scene generation could not satisfy its constraints within the retry budget.
class GenerationError : public Error {
public:
  explicit GenerationError(const std::string& msg) : Error(msg) {}
};

// Malformed on-disk data; carries the byte offset of the first problem.
class FormatError : public Error {
public:
  FormatError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

// Filesystem-level failure (open/read/write).
class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace dsva
