#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "tpulse/text.hpp"

namespace tpulse {

using Timestamp = std::chrono::sys_seconds;

namespace detail {

inline bool read_digits(std::string_view s, std::size_t& pos, int count, int& out) {
    if (pos + static_cast<std::size_t>(count) > s.size()) return false;
    int v = 0;
    for (int i = 0; i < count; ++i) {
        char c = s[pos + static_cast<std::size_t>(i)];
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    pos += static_cast<std::size_t>(count);
    out = v;
    return true;
}

}  // namespace detail

/// Parse "YYYY-MM-DD[T| ]HH:MM:SS[.fff][Z|+HH:MM|-HH:MM|+HHMM]".
/// Without a zone designator the value is taken as UTC. Fractions are dropped.
inline std::optional<Timestamp> parse_iso8601(std::string_view raw) {
    using namespace std::chrono;
    auto s = text::trim_view(raw);
    std::size_t pos = 0;
    int y, mo, d, h, mi, sec;
    if (!detail::read_digits(s, pos, 4, y)) return std::nullopt;
    if (pos >= s.size() || s[pos++] != '-') return std::nullopt;
    if (!detail::read_digits(s, pos, 2, mo)) return std::nullopt;
    if (pos >= s.size() || s[pos++] != '-') return std::nullopt;
    if (!detail::read_digits(s, pos, 2, d)) return std::nullopt;
    if (pos >= s.size() || (s[pos] != 'T' && s[pos] != 't' && s[pos] != ' ')) return std::nullopt;
    ++pos;
    if (!detail::read_digits(s, pos, 2, h)) return std::nullopt;
    if (pos >= s.size() || s[pos++] != ':') return std::nullopt;
    if (!detail::read_digits(s, pos, 2, mi)) return std::nullopt;
    if (pos >= s.size() || s[pos++] != ':') return std::nullopt;
    if (!detail::read_digits(s, pos, 2, sec)) return std::nullopt;
    if (pos < s.size() && (s[pos] == '.' || s[pos] == ',')) {
        ++pos;
        std::size_t start = pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
        if (pos == start) return std::nullopt;
    }
    int offset_minutes = 0;
    if (pos < s.size()) {
        char z = s[pos++];
        if (z == 'Z' || z == 'z') {
            // UTC
        } else if (z == '+' || z == '-') {
            int oh, om = 0;
            if (!detail::read_digits(s, pos, 2, oh)) return std::nullopt;
            if (pos < s.size() && s[pos] == ':') ++pos;
            if (pos < s.size() && !detail::read_digits(s, pos, 2, om)) return std::nullopt;
            if (oh > 23 || om > 59) return std::nullopt;
            offset_minutes = (oh * 60 + om) * (z == '-' ? -1 : 1);
        } else {
            return std::nullopt;
        }
    }
    if (pos != s.size()) return std::nullopt;
    if (h > 23 || mi > 59 || sec > 60) return std::nullopt;

    year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    auto tp = sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec} - minutes{offset_minutes};
    return time_point_cast<seconds>(tp);
}

/// "YYYY-MM-DDTHH:MM:SSZ"
inline std::string format_iso8601(Timestamp ts) {
    using namespace std::chrono;
    auto day_point = floor<days>(ts);
    year_month_day ymd{day_point};
    hh_mm_ss hms{ts - day_point};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    return buf;
}

inline std::int64_t epoch_seconds(Timestamp ts) noexcept { return ts.time_since_epoch().count(); }

inline Timestamp from_epoch_seconds(std::int64_t s) noexcept { return Timestamp{std::chrono::seconds{s}}; }

/// Start of the UTC hour containing ts.
inline Timestamp floor_hour(Timestamp ts) noexcept {
    return std::chrono::floor<std::chrono::hours>(ts);
}

/// Half-open interval [from, to).
struct TimeWindow {
    Timestamp from;
    Timestamp to;

    bool valid() const noexcept { return from < to; }
    bool contains(Timestamp t) const noexcept { return t >= from && t < to; }
};

}  // namespace tpulse
