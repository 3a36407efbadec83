#pragma once

#include <stdexcept>
#include <string>

namespace bnnp {

// Bad shapes, NaN inputs, malformed configs or files.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-PD matrices after jitter retries, NaN gradients, failed solves.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace bnnp
