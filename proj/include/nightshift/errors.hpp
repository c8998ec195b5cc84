#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nightshift {

/// Operand shapes do not satisfy an operation's shape contract.
class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// A caller violated a documented precondition.
class ContractError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

/// Bad user-supplied input (out-of-vocabulary tokens, overlong prompts).
class InputError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// A non-finite value appeared where a finite one was required.
class NumericalError : public std::runtime_error {
   public:
    NumericalError(const std::string& what, std::size_t coordinate)
        : std::runtime_error(what), coordinate_(coordinate) {}
    std::size_t coordinate() const noexcept { return coordinate_; }

   private:
    std::size_t coordinate_;
};

/// Optimizer failure, e.g. NaN gradients.
class TrainingError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Malformed binary payload (PPM, checkpoint). Carries the byte offset where decoding failed.
class FormatError : public std::runtime_error {
   public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

   private:
    std::size_t offset_;
};

/// Malformed text input (manifest CSV, config). Carries a 1-based line number, 0 if unknown.
class ParseError : public std::runtime_error {
   public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

   private:
    std::size_t line_;
};

/// Dataset content violates a stage precondition (missing class, empty domain set, missing file).
class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure; the message names the path.
class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace nightshift
