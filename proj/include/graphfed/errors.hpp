#pragma once

#include <stdexcept>
#include <string>

namespace graphfed {

class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid or inconsistent configuration (CLI exit code 2).
class config_error : public error {
public:
    using error::error;
};

// Malformed or inconsistent input data (CLI exit code 3).
class data_error : public error {
public:
    using error::error;
};

// A file does not follow its declared container format.
class format_error : public data_error {
public:
    using data_error::data_error;
};

// Declared sizes do not match the payload actually present.
class truncation_error : public data_error {
public:
    using data_error::data_error;
};

// Values fail a semantic check: non-finite samples, out-of-range labels, ...
class validation_error : public data_error {
public:
    using data_error::data_error;
};

// Operand shapes do not agree.
class shape_error : public error {
public:
    using error::error;
};

// A computation produced a non-finite value.
class numeric_error : public error {
public:
    using error::error;
};

} // namespace graphfed
