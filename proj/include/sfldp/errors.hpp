#pragma once

#include <stdexcept>
#include <string>

namespace sfldp {

// Raised when a state stops being finite during time integration.
class BlowUpError : public std::runtime_error {
public:
    BlowUpError(const std::string& what, double time)
        : std::runtime_error(what + " (t = " + std::to_string(time) + ")"), time_(time) {}

    double time() const noexcept { return time_; }

private:
    double time_;
};

// Invalid experiment configuration; `field()` is the `section.key` path.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Monte-Carlo estimator saw no events at any parameter value.
class UnderflowError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sfldp
