// errors.hpp — exception taxonomy shared across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace qtraj {

// Base class for all library-raised failures.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or out-of-range experiment specification (CLI exit code 2).
struct spec_error : error {
    using error::error;
};

// Stochastic update left the state unphysical beyond the repair threshold.
struct step_error : error {
    using error::error;
};

// A sampled/visited measurement outcome has vanishing probability.
struct outcome_error : error {
    using error::error;
};

// Iterative solve failed to settle within its horizon.
struct convergence_error : error {
    using error::error;
};

// A conditioned average has no samples to average over.
struct statistics_error : error {
    using error::error;
};

}  // namespace qtraj
