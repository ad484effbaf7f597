#pragma once

#include <stdexcept>
#include <string>

namespace mergelock {

// Error taxonomy shared by the library and the CLI exit-code mapping.
enum class errc {
    usage,      // bad flags / parameters
    shape,      // dimension mismatch
    parameter,  // out-of-range argument
    schema,     // tensor table does not match the model configuration
    parse,      // malformed file
    io,         // filesystem failure
    numeric,    // iteration cap exceeded, non-finite result
    singular,   // matrix not invertible within tolerance
    sampling,   // resample budget exhausted
    key,        // key/model mismatch
};

class Error : public std::runtime_error {
public:
    Error(errc code, std::string message, std::string context = {})
        : std::runtime_error(std::move(message)), code_(code), context_(std::move(context)) {}

    errc code() const noexcept { return code_; }
    const std::string& context() const noexcept { return context_; }

private:
    errc code_;
    std::string context_;
};

struct ShapeError : Error {
    explicit ShapeError(std::string msg, std::string ctx = {})
        : Error(errc::shape, std::move(msg), std::move(ctx)) {}
};

struct ParameterError : Error {
    explicit ParameterError(std::string msg, std::string ctx = {})
        : Error(errc::parameter, std::move(msg), std::move(ctx)) {}
};

struct SchemaError : Error {
    explicit SchemaError(std::string msg, std::string ctx = {})
        : Error(errc::schema, std::move(msg), std::move(ctx)) {}
};

struct ParseError : Error {
    ParseError(std::string msg, std::size_t byte_offset, std::string ctx = {})
        : Error(errc::parse, std::move(msg), std::move(ctx)), byte_offset(byte_offset) {}

    std::size_t byte_offset;
};

struct IoError : Error {
    explicit IoError(std::string msg, std::string ctx = {})
        : Error(errc::io, std::move(msg), std::move(ctx)) {}
};

struct NumericError : Error {
    NumericError(std::string msg, std::size_t iterations = 0, std::string ctx = {})
        : Error(errc::numeric, std::move(msg), std::move(ctx)), iterations(iterations) {}

    std::size_t iterations;
};

struct SingularMatrixError : Error {
    SingularMatrixError(std::string msg, double smallest_pivot, std::string ctx = {})
        : Error(errc::singular, std::move(msg), std::move(ctx)), smallest_pivot(smallest_pivot) {}

    double smallest_pivot;
};

struct SamplingError : Error {
    SamplingError(std::string msg, double last_condition, std::string ctx = {})
        : Error(errc::sampling, std::move(msg), std::move(ctx)), last_condition(last_condition) {}

    double last_condition;
};

struct KeyError : Error {
    explicit KeyError(std::string msg, std::string ctx = {})
        : Error(errc::key, std::move(msg), std::move(ctx)) {}
};

}  // namespace mergelock
