#pragma once

#include <stdexcept>
#include <string>

namespace qmcssa {

/// Invalid or inconsistent configuration: unknown keys, dimension mismatches,
/// table limits, unreadable data files, unstartable external models.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A statistic was requested over a set with no usable (ok) records.
class EmptyResultError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Log-log regression had fewer than two usable points.
class DegenerateFitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Runs handed to a comparison do not share design, model and size.
class ComparabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace qmcssa
