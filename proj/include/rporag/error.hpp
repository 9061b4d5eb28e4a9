#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rporag {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(std::string source, std::size_t line, const std::string& what)
        : Error(source + ":" + std::to_string(line) + ": " + what),
          source_(std::move(source)), line_(line) {}

    const std::string& source() const noexcept { return source_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string source_;
    std::size_t line_;
};

class EmptyGraphError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DegenerateVectorError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class EmbeddingServiceError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class TemplateError : public Error {
public:
    using Error::Error;
};

class ConsistencyError : public Error {
public:
    using Error::Error;
};

class WriteError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// A pipeline stage ran before the stage that produces its input.
class DependencyError : public Error {
public:
    DependencyError(std::string stage, const std::string& what)
        : Error(what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace rporag
