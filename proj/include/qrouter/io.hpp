#pragma once

// Spectrum files.
//
// CSV (canonical, long form), one row per frequency and channel:
//
//     # run_id: simulate-0123456789ab
//     freq_hz,channel,re,im[,bias_ma][,power_dbm][,temp_k]
//     6143000000,AA,0.0316,-0.0012
//
// Numbers are written in shortest round-trip form, so write -> read is
// lossless. `ch` is accepted for `channel`.
//
// Touchstone .s4p with port map 1 = A-in, 2 = A-out, 3 = B-in, 4 = B-out:
// AA = S21, BB = S43, AB = S41, BA = S23. Unmapped entries are written as 0.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "spectrum.hpp"

namespace qrouter {

enum class SpectrumFormat { csv, s4p };

inline SpectrumFormat parse_format(std::string_view s) {
    if (s == "csv") return SpectrumFormat::csv;
    if (s == "s4p" || s == "touchstone" || s == "touchstone-s4p") return SpectrumFormat::s4p;
    throw ConfigError("unknown format '" + std::string(s) + "' (expected csv or s4p)");
}

inline std::string_view format_extension(SpectrumFormat f) { return f == SpectrumFormat::csv ? ".csv" : ".s4p"; }

/// Shortest representation that reads back to the same double.
inline std::string format_double(double x) {
    std::array<char, 32> buf{};
    const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    if (ec != std::errc{}) return "nan";
    return std::string(buf.data(), end);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && ws(s.front())) s.remove_prefix(1);
    while (!s.empty() && ws(s.back())) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

/// Parses a full token as a double; nan/inf spellings are accepted so that
/// non-finite rows can be dropped rather than rejected.
inline std::optional<double> to_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline double require_double(std::string_view s, const std::string& source, std::size_t line, const char* what) {
    const auto v = to_double(s);
    if (!v) throw ParseError(source, line, std::string("cannot parse ") + what + " '" + std::string(s) + "'");
    return *v;
}

} // namespace detail

struct IngestReport {
    std::size_t dropped_rows = 0;             // rows with a non-finite value
    std::size_t dropped_points = 0;           // frequency points removed because of them
    std::vector<std::string> comments;        // '#' lines without the marker
    std::optional<std::string> run_id;        // from a "# run_id: ..." comment
};

// --- CSV ---------------------------------------------------------------------

inline void write_csv(std::ostream& os, const ChannelSpectrum& s, const std::vector<std::string>& comments = {}) {
    validate(s);
    for (const std::string& c : comments) os << "# " << c << '\n';
    os << "freq_hz,channel,re,im";
    if (s.meta.bias_ma) os << ",bias_ma";
    if (s.meta.power_dbm) os << ",power_dbm";
    if (s.meta.temperature_k) os << ",temp_k";
    os << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (Channel c : all_channels) {
            const cplx z = s.trace(c)[i];
            os << format_double(s.freqs_hz[i]) << ',' << channel_name(c) << ',' << format_double(z.real()) << ','
               << format_double(z.imag());
            if (s.meta.bias_ma) os << ',' << format_double(*s.meta.bias_ma);
            if (s.meta.power_dbm) os << ',' << format_double(*s.meta.power_dbm);
            if (s.meta.temperature_k) os << ',' << format_double(*s.meta.temperature_k);
            os << '\n';
        }
    }
}

/// Concatenates several spectra (a sweep) into one CSV; each keeps its
/// metadata columns so read_csv_sweep can split them again.
inline void write_csv_sweep(std::ostream& os, const std::vector<ChannelSpectrum>& sweep,
                            const std::vector<std::string>& comments = {}) {
    for (const std::string& c : comments) os << "# " << c << '\n';
    bool bias = false, power = false, temp = false;
    for (const auto& s : sweep) {
        validate(s);
        bias |= s.meta.bias_ma.has_value();
        power |= s.meta.power_dbm.has_value();
        temp |= s.meta.temperature_k.has_value();
    }
    os << "freq_hz,channel,re,im" << (bias ? ",bias_ma" : "") << (power ? ",power_dbm" : "") << (temp ? ",temp_k" : "")
       << '\n';
    const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (const auto& s : sweep)
        for (std::size_t i = 0; i < s.size(); ++i)
            for (Channel c : all_channels) {
                const cplx z = s.trace(c)[i];
                os << format_double(s.freqs_hz[i]) << ',' << channel_name(c) << ',' << format_double(z.real()) << ','
                   << format_double(z.imag());
                if (bias) os << ',' << opt(s.meta.bias_ma);
                if (power) os << ',' << opt(s.meta.power_dbm);
                if (temp) os << ',' << opt(s.meta.temperature_k);
                os << '\n';
            }
}

namespace detail {

struct CsvRow {
    std::size_t line;
    double f;
    Channel ch;
    cplx z;
    bool finite;
};

using MetaKey = std::tuple<std::optional<double>, std::optional<double>, std::optional<double>>;

inline ChannelSpectrum assemble(const std::vector<CsvRow>& rows, const SpectrumMetadata& meta, const std::string& source,
                                IngestReport& report) {
    // Per channel: frequency -> (value, finite); duplicates and ordering are
    // checked in file order.
    std::array<std::vector<CsvRow>, 4> per;
    for (const CsvRow& r : rows) {
        auto& v = per[index_of(r.ch)];
        if (!v.empty()) {
            if (r.f == v.back().f)
                throw ParseError(source, r.line, "duplicate frequency " + format_double(r.f) + " for channel " +
                                                     std::string(channel_name(r.ch)));
            if (r.f < v.back().f)
                throw ParseError(source, r.line, "non-monotone frequency " + format_double(r.f) + " for channel " +
                                                     std::string(channel_name(r.ch)));
        }
        v.push_back(r);
    }
    const std::size_t n = per[0].size();
    for (Channel c : all_channels) {
        const auto& v = per[index_of(c)];
        if (v.size() != n) {
            const std::size_t line = v.empty() ? (rows.empty() ? 0 : rows.back().line) : v.back().line;
            throw ParseError(source, line,
                             "channel " + std::string(channel_name(c)) + " has " + std::to_string(v.size()) +
                                 " rows, AA has " + std::to_string(n));
        }
        for (std::size_t i = 0; i < n; ++i)
            if (v[i].f != per[0][i].f)
                throw ParseError(source, v[i].line,
                                 "frequency grid of channel " + std::string(channel_name(c)) + " differs from AA");
    }
    ChannelSpectrum s;
    s.meta = meta;
    for (std::size_t i = 0; i < n; ++i) {
        bool ok = std::isfinite(per[0][i].f);
        for (const auto& v : per) ok = ok && v[i].finite;
        if (!ok) {
            ++report.dropped_points;
            continue;
        }
        ChannelSet set;
        for (Channel c : all_channels) set[c] = per[index_of(c)][i].z;
        s.push_back(per[0][i].f, set);
    }
    return s;
}

inline std::vector<ChannelSpectrum> read_csv_groups(std::istream& is, const std::string& source, IngestReport& report) {
    std::string text;
    std::size_t line_no = 0;
    std::optional<std::vector<std::string>> header;
    int i_f = -1, i_ch = -1, i_re = -1, i_im = -1, i_bias = -1, i_pow = -1, i_temp = -1;
    std::vector<MetaKey> order;
    std::map<MetaKey, std::vector<CsvRow>> groups;
    while (std::getline(is, text)) {
        ++line_no;
        const std::string_view line = trim(text);
        if (line.empty()) continue;
        if (line.front() == '#') {
            std::string_view c = trim(line.substr(1));
            report.comments.emplace_back(c);
            if (c.rfind("run_id:", 0) == 0) report.run_id = std::string(trim(c.substr(7)));
            continue;
        }
        const auto cells = split(line, ',');
        if (!header) {
            header.emplace();
            for (std::size_t k = 0; k < cells.size(); ++k) {
                const std::string name(cells[k]);
                const int idx = static_cast<int>(k);
                if (name == "freq_hz") i_f = idx;
                else if (name == "channel" || name == "ch") i_ch = idx;
                else if (name == "re") i_re = idx;
                else if (name == "im") i_im = idx;
                else if (name == "bias_ma") i_bias = idx;
                else if (name == "power_dbm") i_pow = idx;
                else if (name == "temp_k") i_temp = idx;
                else throw ParseError(source, line_no, "unknown column '" + name + "'");
                header->push_back(name);
            }
            if (i_f < 0 || i_ch < 0 || i_re < 0 || i_im < 0)
                throw ParseError(source, line_no, "header must contain freq_hz, channel, re, im");
            continue;
        }
        if (cells.size() != header->size())
            throw ParseError(source, line_no,
                             "expected " + std::to_string(header->size()) + " fields, got " + std::to_string(cells.size()));
        CsvRow r{};
        r.line = line_no;
        r.f = require_double(cells[i_f], source, line_no, "freq_hz");
        try {
            r.ch = parse_channel(cells[i_ch]);
        } catch (const std::invalid_argument& e) {
            throw ParseError(source, line_no, e.what());
        }
        const double re = require_double(cells[i_re], source, line_no, "re");
        const double im = require_double(cells[i_im], source, line_no, "im");
        r.z = cplx(re, im);
        r.finite = std::isfinite(r.f) && std::isfinite(re) && std::isfinite(im);
        if (!r.finite) ++report.dropped_rows;
        const auto meta_at = [&](int idx, const char* what) -> std::optional<double> {
            if (idx < 0 || cells[idx].empty()) return std::nullopt;
            return require_double(cells[idx], source, line_no, what);
        };
        const MetaKey key{meta_at(i_bias, "bias_ma"), meta_at(i_pow, "power_dbm"), meta_at(i_temp, "temp_k")};
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) order.push_back(key);
        it->second.push_back(r);
    }
    if (!header) throw ParseError(source, line_no, "missing header line");
    std::vector<ChannelSpectrum> out;
    for (const MetaKey& k : order) {
        SpectrumMetadata meta;
        meta.bias_ma = std::get<0>(k);
        meta.power_dbm = std::get<1>(k);
        meta.temperature_k = std::get<2>(k);
        out.push_back(assemble(groups[k], meta, source, report));
    }
    return out;
}

} // namespace detail

/// All spectra of a CSV, split by their metadata columns in order of first
/// appearance.
inline std::vector<ChannelSpectrum> read_csv_sweep(std::istream& is, const std::string& source = "<csv>",
                                                   IngestReport* report = nullptr) {
    IngestReport local;
    auto out = detail::read_csv_groups(is, source, report ? *report : local);
    return out;
}

inline ChannelSpectrum read_csv(std::istream& is, const std::string& source = "<csv>", IngestReport* report = nullptr) {
    IngestReport local;
    IngestReport& rep = report ? *report : local;
    auto groups = detail::read_csv_groups(is, source, rep);
    if (groups.empty()) throw ParseError(source, 0, "no data rows");
    if (groups.size() > 1) throw ParseError(source, 0, "file holds a sweep; read it with read_csv_sweep");
    return std::move(groups.front());
}

// --- Touchstone ----------------------------------------------------------------

namespace detail {

struct S4pSlot {
    int row, col;
};

// (row, col) of each channel in the 4x4 S matrix, 0-based.
inline constexpr std::array<S4pSlot, 4> s4p_slots{{{1, 0}, {3, 2}, {3, 0}, {1, 2}}};

inline double frequency_multiplier(std::string_view unit, const std::string& source, std::size_t line) {
    std::string u(unit);
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (u == "HZ") return 1.0;
    if (u == "KHZ") return 1e3;
    if (u == "MHZ") return 1e6;
    if (u == "GHZ") return 1e9;
    throw ParseError(source, line, "unknown frequency unit '" + u + "'");
}

} // namespace detail

inline void write_s4p(std::ostream& os, const ChannelSpectrum& s, const std::vector<std::string>& comments = {}) {
    validate(s);
    for (const std::string& c : comments) os << "! " << c << '\n';
    os << "! ports: 1=A-in 2=A-out 3=B-in 4=B-out\n";
    os << "# Hz S RI R 50\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::array<cplx, 16> m{};
        for (Channel c : all_channels) {
            const auto slot = detail::s4p_slots[index_of(c)];
            m[static_cast<std::size_t>(slot.row * 4 + slot.col)] = s.trace(c)[i];
        }
        for (int r = 0; r < 4; ++r) {
            os << (r == 0 ? format_double(s.freqs_hz[i]) : std::string(" "));
            for (int col = 0; col < 4; ++col) {
                const cplx z = m[static_cast<std::size_t>(r * 4 + col)];
                os << ' ' << format_double(z.real()) << ' ' << format_double(z.imag());
            }
            os << '\n';
        }
    }
}

inline ChannelSpectrum read_s4p(std::istream& is, const std::string& source = "<s4p>", IngestReport* report = nullptr) {
    IngestReport local;
    IngestReport& rep = report ? *report : local;
    double fmul = 1e9;
    enum class Fmt { ri, ma, db } fmt = Fmt::ma;
    bool seen_option = false;
    std::vector<std::pair<double, std::size_t>> numbers; // value, line
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(is, text)) {
        ++line_no;
        std::string_view line = text;
        if (const auto bang = line.find('!'); bang != std::string_view::npos) {
            rep.comments.emplace_back(detail::trim(line.substr(bang + 1)));
            line = line.substr(0, bang);
        }
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '#') {
            if (seen_option) throw ParseError(source, line_no, "second option line");
            seen_option = true;
            const auto tok = detail::split_ws(line.substr(1));
            for (std::size_t k = 0; k < tok.size(); ++k) {
                std::string t(tok[k]);
                std::transform(t.begin(), t.end(), t.begin(),
                               [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
                if (t == "HZ" || t == "KHZ" || t == "MHZ" || t == "GHZ") fmul = detail::frequency_multiplier(t, source, line_no);
                else if (t == "RI") fmt = Fmt::ri;
                else if (t == "MA") fmt = Fmt::ma;
                else if (t == "DB") fmt = Fmt::db;
                else if (t == "S") {}
                else if (t == "R") ++k; // reference impedance, not needed
                else throw ParseError(source, line_no, "unsupported option '" + t + "'");
            }
            continue;
        }
        if (line.front() == '[') throw ParseError(source, line_no, "touchstone 2.0 keywords are not supported");
        for (std::string_view tok : detail::split_ws(line))
            numbers.emplace_back(detail::require_double(tok, source, line_no, "number"), line_no);
    }
    constexpr std::size_t per_point = 33;
    if (numbers.size() % per_point != 0)
        throw ParseError(source, numbers.empty() ? line_no : numbers.back().second,
                         "data does not form whole 4-port records (" + std::to_string(numbers.size()) + " numbers)");
    ChannelSpectrum s;
    std::optional<double> last_f;
    for (std::size_t p = 0; p < numbers.size(); p += per_point) {
        const std::size_t line = numbers[p].second;
        const double f = numbers[p].first * fmul;
        if (last_f && f == *last_f) throw ParseError(source, line, "duplicate frequency " + format_double(f));
        if (last_f && f < *last_f) throw ParseError(source, line, "non-monotone frequency " + format_double(f));
        last_f = f;
        ChannelSet set;
        bool finite = std::isfinite(f);
        for (Channel c : all_channels) {
            const auto slot = detail::s4p_slots[index_of(c)];
            const std::size_t k = p + 1 + 2 * static_cast<std::size_t>(slot.row * 4 + slot.col);
            const double a = numbers[k].first, b = numbers[k + 1].first;
            cplx z;
            switch (fmt) {
            case Fmt::ri: z = cplx(a, b); break;
            case Fmt::ma: z = std::polar(a, b * std::numbers::pi / 180.0); break;
            case Fmt::db: z = std::polar(std::pow(10.0, a / 20.0), b * std::numbers::pi / 180.0); break;
            }
            finite = finite && std::isfinite(z.real()) && std::isfinite(z.imag());
            set[c] = z;
        }
        if (!finite) {
            ++rep.dropped_rows;
            ++rep.dropped_points;
            continue;
        }
        s.push_back(f, set);
    }
    return s;
}

// --- files ---------------------------------------------------------------------

inline ChannelSpectrum ingest_spectrum(const std::string& path, SpectrumFormat format, IngestReport* report = nullptr) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    ChannelSpectrum s = format == SpectrumFormat::csv ? read_csv(in, path, report) : read_s4p(in, path, report);
    if (s.size() == 0) throw ParseError(path, 0, "no finite data points");
    return s;
}

/// Format from the file extension: .s4p is Touchstone, anything else CSV.
inline SpectrumFormat format_from_path(const std::string& path) {
    const auto dot = path.rfind('.');
    if (dot != std::string::npos) {
        std::string ext = path.substr(dot + 1);
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == "s4p") return SpectrumFormat::s4p;
    }
    return SpectrumFormat::csv;
}

// --- plain tables --------------------------------------------------------------

/// Plot-ready numeric table with a header row.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void add(std::vector<double> row) {
        if (row.size() != columns.size()) throw std::invalid_argument("Table::add: row width differs from header");
        rows.push_back(std::move(row));
    }
};

inline void write_table(std::ostream& os, const Table& t, const std::vector<std::string>& comments = {}) {
    for (const std::string& c : comments) os << "# " << c << '\n';
    for (std::size_t k = 0; k < t.columns.size(); ++k) os << (k ? "," : "") << t.columns[k];
    os << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << format_double(row[k]);
        os << '\n';
    }
}

} // namespace qrouter
