#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fairflow {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller violated a documented precondition (bad arguments, missing inputs).
class PreconditionError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class EmptyCorpusError : public Error {
public:
    EmptyCorpusError() : Error("corpus contains no documents") {}
};

class DimensionMismatch : public Error {
public:
    DimensionMismatch(std::size_t expected, std::size_t got)
        : Error("dimension mismatch: expected " + std::to_string(expected) + ", got " +
                std::to_string(got)) {}
};

class InsufficientOccurrences : public Error {
public:
    InsufficientOccurrences(const std::string& word, std::size_t count, std::size_t required)
        : Error("word '" + word + "' occurs " + std::to_string(count) + " times, need at least " +
                std::to_string(required)),
          word_(word), count_(count) {}
    const std::string& word() const { return word_; }
    std::size_t count() const { return count_; }

private:
    std::string word_;
    std::size_t count_;
};

// Non-finite loss during iterative training.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t epoch)
        : Error(what + " diverged at epoch " + std::to_string(epoch)), epoch_(epoch) {}
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_;
};

// Non-finite intermediate inside a flow layer.
class NumericError : public Error {
public:
    NumericError(const std::string& what, std::size_t layer)
        : Error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}
    std::size_t layer() const { return layer_; }

private:
    std::size_t layer_;
};

class NotFittedError : public Error {
public:
    using Error::Error;
};

class UndefinedMetric : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    using Error::Error;
};

}  // namespace fairflow
