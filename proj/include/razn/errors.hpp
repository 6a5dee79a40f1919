#pragma once

#include <stdexcept>
#include <string>

namespace razn {

/// Invalid shapes, sizes or configuration values.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed data passed to an otherwise well-configured operation.
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A window or level outside the pyramid.
struct RangeError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// Zoom requested past the finest pyramid level.
struct MaxMagnificationError : RangeError {
    using RangeError::RangeError;
};

/// Batch statistics requested over a single element.
struct DegenerateBatchError : ConfigError {
    using ConfigError::ConfigError;
};

/// Non-finite loss, gradient or parameter.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Metric with no defined value (e.g. no class has a non-empty union).
struct UndefinedMetricError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Checkpoint or dataset that does not match the requested configuration.
struct ArtifactMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace razn
