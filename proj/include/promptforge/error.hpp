#pragma once

#include <stdexcept>
#include <string>

namespace promptforge {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when raster or field dimensions disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Optimizer produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(int step, const std::string& what)
        : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

class PrototypeUndefined : public Error {
public:
    using Error::Error;
};

/// Prompt construction was impossible (empty mask, no candidate pixels).
class PromptFailure : public Error {
public:
    using Error::Error;
};

/// A segmenter/embedder backend failed. `retryable` mirrors the bridge error body.
class BackendError : public Error {
public:
    BackendError(const std::string& what, bool retryable, int attempts = 1)
        : Error(what), retryable_(retryable), attempts_(attempts) {}
    bool retryable() const noexcept { return retryable_; }
    int attempts() const noexcept { return attempts_; }

private:
    bool retryable_;
    int attempts_;
};

/// Response or request violated the bridge schema.
class ProtocolError : public Error {
public:
    ProtocolError(const std::string& field, const std::string& what)
        : Error("protocol error in '" + field + "': " + what), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace promptforge
