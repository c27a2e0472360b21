#pragma once

#include <stdexcept>
#include <string>

namespace lingopt {

/// Base class for all lingopt errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension mismatch between operands. Messages name both shapes.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// A precondition on an operation's inputs was violated.
class PreconditionError : public Error {
public:
  using Error::Error;
};

/// Non-finite values appeared where the contract requires finite ones.
class NumericError : public Error {
public:
  using Error::Error;
};

/// Unknown token or malformed vocabulary.
class VocabError : public Error {
public:
  using Error::Error;
};

/// Invalid configuration (e.g. nothing trainable, bad schedule).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Training produced a NaN loss; message names the step.
class DivergenceError : public Error {
public:
  explicit DivergenceError(const std::string& msg, long step) : Error(msg), step_(step) {}
  long step() const { return step_; }

private:
  long step_;
};

/// Retryable network failure (connect/timeout/5xx after retries).
class TransportError : public Error {
public:
  using Error::Error;
};

/// Server rejected the request (4xx); never retried.
class RequestError : public Error {
public:
  explicit RequestError(const std::string& msg, int status) : Error(msg), status_(status) {}
  int status() const { return status_; }

private:
  int status_ = 0;
};

/// Reply violated the wire contract (bad JSON, count mismatch, positive logprob).
class ProtocolError : public Error {
public:
  using Error::Error;
};

/// A generation request produced no text; callers fall back.
class EmptyOutputError : public Error {
public:
  using Error::Error;
};

/// File parsing failed (datasets, scripts, checkpoints).
class LoadError : public Error {
public:
  using Error::Error;
};

}  // namespace lingopt
