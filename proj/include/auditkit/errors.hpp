#pragma once

#include <stdexcept>
#include <string>

namespace audit {

// Error taxonomy shared across the toolkit. The CLI maps these onto exit
// codes: validation -> 2, io -> 3, endpoint -> 4.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments, malformed configs, contract violations on inputs.
class validation_error : public error {
public:
    explicit validation_error(const std::string& msg) : error(msg) {}
};

// Shape mismatch between tensors; message names the offending axis.
class dimension_error : public validation_error {
public:
    explicit dimension_error(const std::string& msg) : validation_error(msg) {}
};

// API misuse (e.g. backward on a non-scalar node).
class usage_error : public error {
public:
    explicit usage_error(const std::string& msg) : error(msg) {}
};

class io_error : public error {
public:
    explicit io_error(const std::string& msg) : error(msg) {}
};

// Remote inference endpoint failed after retries, or returned a hard error.
class endpoint_error : public error {
public:
    explicit endpoint_error(const std::string& msg) : error(msg) {}
};

}  // namespace audit
