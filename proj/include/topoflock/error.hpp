#pragma once

#include <stdexcept>
#include <string>

namespace topoflock {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Malformed or inconsistent experiment / CLI configuration.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Rejection sampler could not place a point after its attempt budget.
class SamplerError : public std::runtime_error {
public:
    explicit SamplerError(const std::string& what) : std::runtime_error(what) {}
};

/// Predicted cost of an experiment exceeds the configured cap.
class BudgetError : public std::runtime_error {
public:
    explicit BudgetError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace topoflock
