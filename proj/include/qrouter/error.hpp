#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qrouter {

// Invalid arguments use std::invalid_argument directly. The types below carry
// extra diagnostics that callers (and the CLI error summary) need.

class SingularNetworkError : public std::runtime_error {
public:
    SingularNetworkError(const std::string& what, double condition_number)
        : std::runtime_error(what), condition_number_(condition_number) {}
    double condition_number() const noexcept { return condition_number_; }

private:
    double condition_number_;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, double spectral_radius)
        : std::runtime_error(what), spectral_radius_(spectral_radius) {}
    double spectral_radius() const noexcept { return spectral_radius_; }

private:
    double spectral_radius_;
};

class DegenerateReferenceError : public std::runtime_error {
public:
    DegenerateReferenceError(const std::string& what, std::vector<double> freqs_hz)
        : std::runtime_error(what), freqs_hz_(std::move(freqs_hz)) {}
    const std::vector<double>& offending_freqs_hz() const noexcept { return freqs_hz_; }

private:
    std::vector<double> freqs_hz_;
};

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& msg)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace qrouter
