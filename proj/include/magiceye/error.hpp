#pragma once

#include <stdexcept>
#include <string>

namespace magiceye {

// Input violated a documented contract (bad row, out-of-range threshold, ...).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A pluggable backend (detector, face, currency) is missing or failed.
class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace magiceye
