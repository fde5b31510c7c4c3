#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"

namespace qrouter {

struct SpectrumMetadata {
    std::optional<double> bias_ma;
    std::optional<double> power_dbm;
    std::optional<double> temperature_k;

    bool operator==(const SpectrumMetadata&) const = default;
};

/// Frequency grid (Hz, strictly increasing) with the four complex channel traces.
struct ChannelSpectrum {
    std::vector<double> freqs_hz;
    std::array<std::vector<cplx>, 4> traces;
    SpectrumMetadata meta;

    std::size_t size() const noexcept { return freqs_hz.size(); }

    std::vector<cplx>& trace(Channel c) noexcept { return traces[index_of(c)]; }
    const std::vector<cplx>& trace(Channel c) const noexcept { return traces[index_of(c)]; }

    ChannelSet at(std::size_t i) const {
        ChannelSet s;
        for (Channel c : all_channels) s[c] = trace(c)[i];
        return s;
    }

    void push_back(double f_hz, const ChannelSet& s) {
        freqs_hz.push_back(f_hz);
        for (Channel c : all_channels) trace(c).push_back(s[c]);
    }

    double omega(std::size_t i) const noexcept { return hz_to_angular(freqs_hz[i]); }

    bool operator==(const ChannelSpectrum&) const = default;
};

/// Throws std::invalid_argument when lengths differ, the grid is not strictly
/// increasing, or any entry is non-finite.
inline void validate(const ChannelSpectrum& s) {
    for (Channel c : all_channels)
        if (s.trace(c).size() != s.freqs_hz.size())
            throw std::invalid_argument("spectrum channel " + std::string(channel_name(c)) + " length mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!std::isfinite(s.freqs_hz[i])) throw std::invalid_argument("spectrum has non-finite frequency");
        if (i > 0 && !(s.freqs_hz[i] > s.freqs_hz[i - 1]))
            throw std::invalid_argument("spectrum frequencies must be strictly increasing");
        for (Channel c : all_channels) {
            const cplx z = s.trace(c)[i];
            if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
                throw std::invalid_argument("spectrum has non-finite entry");
        }
    }
}

/// Uniform grid of `n` points from `start_hz` to `stop_hz` inclusive.
inline std::vector<double> linear_grid(double start_hz, double stop_hz, std::size_t n) {
    if (n < 2) throw std::invalid_argument("linear_grid needs at least two points");
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = start_hz + (stop_hz - start_hz) * static_cast<double>(i) / static_cast<double>(n - 1);
    return g;
}

/// Complex linear interpolation (independently on re/im) of `src` onto
/// `grid`. Points outside the source span are rejected, not extrapolated.
inline ChannelSpectrum resample(const ChannelSpectrum& src, const std::vector<double>& grid) {
    if (src.size() < 2) throw std::invalid_argument("resample: source needs at least two points");
    ChannelSpectrum out;
    out.meta = src.meta;
    out.freqs_hz = grid;
    for (Channel c : all_channels) out.trace(c).reserve(grid.size());
    for (double f : grid) {
        if (f < src.freqs_hz.front() || f > src.freqs_hz.back())
            throw std::invalid_argument("resample: target frequency outside the reference span");
        auto it = std::upper_bound(src.freqs_hz.begin(), src.freqs_hz.end(), f);
        std::size_t hi = static_cast<std::size_t>(it - src.freqs_hz.begin());
        if (hi >= src.size()) hi = src.size() - 1;
        const std::size_t lo = hi - 1;
        const double w = (f - src.freqs_hz[lo]) / (src.freqs_hz[hi] - src.freqs_hz[lo]);
        for (Channel c : all_channels) {
            const auto& t = src.trace(c);
            out.trace(c).push_back((1.0 - w) * t[lo] + w * t[hi]);
        }
    }
    return out;
}

} // namespace qrouter
