#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lmswitch {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Token = int;
using TokenSeq = std::vector<Token>;
using TokenSpan = std::span<const Token>;

// Error hierarchy. The CLI maps InputError (and subclasses) to exit code 1,
// everything else to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class FormatError : public InputError {
public:
    FormatError(const std::string& what, std::size_t offset)
        : InputError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class BudgetError : public InputError {
public:
    using InputError::InputError;
};

class InsufficientAnchorsError : public InputError {
public:
    using InputError::InputError;
};

class DegeneratePrefixError : public Error {
public:
    using Error::Error;
};

class FactorizationError : public Error {
public:
    using Error::Error;
};

class DegenerateConditionError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

class ScorerUnavailableError : public Error {
public:
    using Error::Error;
};

class ScorerProtocolError : public Error {
public:
    using Error::Error;
};

}  // namespace lmswitch
