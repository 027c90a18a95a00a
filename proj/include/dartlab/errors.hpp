#pragma once

#include <stdexcept>
#include <string>

namespace dartlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad experiment / operation parameters (wrong rho length, lambda = 0, ...).
struct ConfigError : Error {
    using Error::Error;
};

/// Dimension or length mismatch between tensors that must agree.
struct ShapeError : Error {
    using Error::Error;
};

/// Operation undefined for the given input (empty dataset, zero window, ...).
struct DomainError : Error {
    using Error::Error;
};

/// Learning-rate schedule queried outside its epoch range.
struct ScheduleError : Error {
    using Error::Error;
};

/// NaN/Inf appeared in model weights during integration or training.
struct DivergenceError : Error {
    DivergenceError(const std::string& what, double last_stable_time)
        : Error(what), last_stable_t(last_stable_time) {}
    double last_stable_t;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace dartlab
