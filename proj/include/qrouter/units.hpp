#pragma once

#include <cmath>
#include <numbers>

namespace qrouter {

namespace constants {
inline constexpr double hbar = 1.054571817e-34;      // J s
inline constexpr double k_boltzmann = 1.380649e-23;  // J/K
inline constexpr double two_pi = 2.0 * std::numbers::pi;
} // namespace constants

// Rates and frequencies are angular (rad/s) everywhere inside the library.
// Files and the CLI speak Hz; these helpers are the only crossing point.
constexpr double hz_to_angular(double hz) noexcept { return constants::two_pi * hz; }
constexpr double angular_to_hz(double omega) noexcept { return omega / constants::two_pi; }

// 2*pi*MHz and 2*pi*GHz shorthands.
constexpr double mhz(double value) noexcept { return hz_to_angular(value * 1e6); }
constexpr double ghz(double value) noexcept { return hz_to_angular(value * 1e9); }

inline double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }
inline double amplitude_to_db(double amplitude) { return 20.0 * std::log10(amplitude); }

} // namespace qrouter
