#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tpulse/corpus.hpp"
#include "tpulse/csv.hpp"
#include "tpulse/error.hpp"
#include "tpulse/extraction.hpp"
#include "tpulse/json_io.hpp"
#include "tpulse/timeutil.hpp"
#include "tpulse/tokenize.hpp"

namespace tpulse {

inline void require_window(const TimeWindow& w) {
    if (!w.valid()) throw UsageError("analytics: window start must be before its end");
}

/// Hour starts covering [floor_hour(from), to).
inline std::vector<Timestamp> window_hours(const TimeWindow& w) {
    std::vector<Timestamp> out;
    for (auto h = floor_hour(w.from); h < w.to; h += std::chrono::hours(1)) out.push_back(h);
    return out;
}

/// Whole hours spanning every record; one hour from the epoch when empty.
inline TimeWindow data_span(const std::vector<ConsensusResult>& records) {
    if (records.empty()) return {from_epoch_seconds(0), from_epoch_seconds(3600)};
    auto [mn, mx] = std::minmax_element(records.begin(), records.end(),
                                        [](const auto& a, const auto& b) { return a.created_at < b.created_at; });
    return {floor_hour(mn->created_at), floor_hour(mx->created_at) + std::chrono::hours(1)};
}

// ---------------------------------------------------------------------------
// Hourly volume

struct HourlyVolume {
    TimeWindow window;
    std::vector<Timestamp> hours;
    std::vector<std::size_t> counts;
    std::array<std::size_t, 24> hour_of_day{};  // local time
};

inline HourlyVolume hourly_volume(const std::vector<ConsensusResult>& records, const TimeWindow& window,
                                  int utc_offset_minutes = kDefaultUtcOffsetMinutes) {
    require_window(window);
    HourlyVolume v{window, window_hours(window), {}, {}};
    v.counts.assign(v.hours.size(), 0);
    const auto first = floor_hour(window.from);
    for (const auto& r : records) {
        if (!window.contains(r.created_at)) continue;
        auto idx = std::chrono::duration_cast<std::chrono::hours>(floor_hour(r.created_at) - first).count();
        ++v.counts[static_cast<std::size_t>(idx)];
        ++v.hour_of_day[static_cast<std::size_t>(local_hour(r.created_at, utc_offset_minutes))];
    }
    return v;
}

inline Json to_json(const HourlyVolume& v) {
    Json hours = Json::array();
    for (std::size_t i = 0; i < v.hours.size(); ++i)
        hours.push_back({{"hour", format_iso8601(v.hours[i])}, {"count", v.counts[i]}});
    return {{"from", format_iso8601(v.window.from)},
            {"to", format_iso8601(v.window.to)},
            {"hours", std::move(hours)},
            {"hour_of_day", v.hour_of_day}};
}

// ---------------------------------------------------------------------------
// Station series

struct StationRow {
    std::string station;
    std::vector<std::size_t> counts;  // aligned with StationSeries::hours
    std::size_t total = 0;
};

struct StationSeries {
    TimeWindow window;
    std::vector<Timestamp> hours;
    std::vector<StationRow> stations;  // by total descending, ties by name

    const StationRow* find(std::string_view station) const {
        for (const auto& s : stations)
            if (s.station == station) return &s;
        return nullptr;
    }
};

/// Per-hour mentions of canonical stations. top_n == 0 keeps every station.
inline StationSeries station_mention_counts(const std::vector<ConsensusResult>& records, const TimeWindow& window,
                                            std::size_t top_n = 5) {
    require_window(window);
    StationSeries s{window, window_hours(window), {}};
    const auto first = floor_hour(window.from);
    std::map<std::string, StationRow> rows;
    for (const auto& r : records) {
        if (!r.record.station_canonical || !window.contains(r.created_at)) continue;
        auto& row = rows[*r.record.station_canonical];
        if (row.counts.empty()) {
            row.station = *r.record.station_canonical;
            row.counts.assign(s.hours.size(), 0);
        }
        auto idx = std::chrono::duration_cast<std::chrono::hours>(floor_hour(r.created_at) - first).count();
        ++row.counts[static_cast<std::size_t>(idx)];
        ++row.total;
    }
    for (auto& [_, row] : rows) s.stations.push_back(std::move(row));
    std::stable_sort(s.stations.begin(), s.stations.end(),
                     [](const StationRow& a, const StationRow& b) { return a.total > b.total; });
    if (top_n && s.stations.size() > top_n) s.stations.resize(top_n);
    return s;
}

inline Json to_json(const StationSeries& s) {
    Json hours = Json::array();
    for (auto h : s.hours) hours.push_back(format_iso8601(h));
    Json rows = Json::array();
    for (const auto& r : s.stations) rows.push_back({{"station", r.station}, {"total", r.total}, {"counts", r.counts}});
    return {{"from", format_iso8601(s.window.from)},
            {"to", format_iso8601(s.window.to)},
            {"hours", std::move(hours)},
            {"stations", std::move(rows)}};
}

// ---------------------------------------------------------------------------
// Sentiment x sarcasm

struct SentimentSarcasmMatrix {
    std::array<std::array<std::size_t, 2>, 3> cells{};  // [sentiment][sarcasm]

    std::size_t at(Sentiment s, bool sarcastic) const {
        return cells[static_cast<std::size_t>(s)][sarcastic ? 1 : 0];
    }
    std::size_t total() const {
        std::size_t t = 0;
        for (const auto& row : cells) t += row[0] + row[1];
        return t;
    }
};

inline SentimentSarcasmMatrix sentiment_sarcasm_matrix(const std::vector<ConsensusResult>& records) {
    SentimentSarcasmMatrix m;
    for (const auto& r : records) ++m.cells[static_cast<std::size_t>(r.record.sentiment)][r.record.sarcasm ? 1 : 0];
    return m;
}

inline Json to_json(const SentimentSarcasmMatrix& m) {
    Json rows = Json::object();
    for (auto s : kSentiments)
        rows[std::string(to_string(s))] = {{"sarcastic", m.at(s, true)}, {"not_sarcastic", m.at(s, false)}};
    return {{"cells", std::move(rows)}, {"total", m.total()}};
}

// ---------------------------------------------------------------------------
// Keywords

inline std::set<std::string> parse_stopwords(std::string_view doc) {
    std::set<std::string> out;
    for (const auto& line : text::split_lines(doc)) {
        auto t = text::trim_view(line);
        if (t.empty() || t.front() == '#') continue;
        out.insert(text::to_lower(t));
    }
    return out;
}

inline std::set<std::string> load_stopwords(const std::string& path) { return parse_stopwords(csv::read_file(path)); }

/// Same list as share/stopwords.txt, used when no file is configured.
inline const std::set<std::string>& default_stopwords() {
    static const auto words = parse_stopwords(
        "a\nabout\nabove\nafter\nagain\nagainst\nall\nam\nan\nand\nany\nare\nas\nat\nbe\nbecause\nbeen\nbefore\n"
        "being\nbelow\nbetween\nboth\nbut\nby\ncan\ncould\ndid\ndo\ndoes\ndoing\ndon\ndown\nduring\neach\nfew\nfor\n"
        "from\nfurther\nhad\nhas\nhave\nhaving\nhe\nher\nhere\nhers\nherself\nhim\nhimself\nhis\nhow\ni\nif\nin\n"
        "into\nis\nit\nits\nitself\njust\nme\nmore\nmost\nmy\nmyself\nno\nnor\nnot\nnow\nof\noff\non\nonce\nonly\n"
        "or\nother\nour\nours\nourselves\nout\nover\nown\nsame\nshe\nshould\nso\nsome\nsuch\nt\nthan\nthat\nthe\n"
        "their\ntheirs\nthem\nthemselves\nthen\nthere\nthese\nthey\nthis\nthose\nthrough\nto\ntoo\nunder\nuntil\n"
        "up\nvery\nwas\nwe\nwere\nwhat\nwhen\nwhere\nwhich\nwhile\nwho\nwhom\nwhy\nwill\nwith\nwould\nyou\nyour\n"
        "yours\nyourself\nyourselves\ns\nll\nre\nve\nm\nd\nttc\nvia\namp\nrt\n");
    return words;
}

struct KeywordSummary {
    std::string category;  // topic name, "none", or "all"
    std::vector<std::pair<std::string, std::size_t>> terms;
};

/// Filter for keyword_summary: no value means every record; a value selects
/// one problem_topic (including "no topic").
using CategoryFilter = std::optional<TopicField>;

inline CategoryFilter category_filter_from_string(std::string_view s) {
    auto k = text::label_key(s);
    if (k.empty() || k == "all") return std::nullopt;
    if (k == "none") return TopicField{};
    auto t = topic_from_string(k);
    if (!t) throw UsageError("unknown problem category '" + std::string(s) + "'");
    return TopicField{*t};
}

inline std::string category_filter_name(const CategoryFilter& c) {
    return c ? topic_field_string(*c) : std::string("all");
}

/// Ranked summary-word counts; equal counts are ordered lexicographically.
inline KeywordSummary keyword_summary(const std::vector<ConsensusResult>& records, const CategoryFilter& category,
                                      const std::set<std::string>& stopwords, std::size_t top_n = 20) {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : records) {
        if (category && r.record.problem_topic != *category) continue;
        for (auto& tok : tokenize(r.record.problem_summary))
            if (!stopwords.count(tok)) ++counts[tok];
    }
    KeywordSummary out{category_filter_name(category), {counts.begin(), counts.end()}};
    std::stable_sort(out.terms.begin(), out.terms.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (top_n && out.terms.size() > top_n) out.terms.resize(top_n);
    return out;
}

inline Json to_json(const KeywordSummary& k) {
    Json terms = Json::array();
    for (const auto& [t, c] : k.terms) terms.push_back({{"term", t}, {"count", c}});
    return {{"category", k.category}, {"terms", std::move(terms)}};
}

inline std::string to_csv(const KeywordSummary& k) {
    std::string out = "term,count\n";
    for (const auto& [t, c] : k.terms) out += csv::format_row({t, std::to_string(c)});
    return out;
}

// ---------------------------------------------------------------------------
// Spike alerts

struct HourlyStats {
    double mean = 0;
    double stdev = 0;
};

struct Baseline {
    std::map<std::string, HourlyStats> per_station;
    HourlyStats global;

    const HourlyStats& for_station(const std::string& s) const {
        auto it = per_station.find(s);
        return it == per_station.end() ? global : it->second;
    }
};

/// Mean and population stdev of hourly counts over a history window. Every
/// hour of the window counts, including hours with no mentions. The global
/// entry pools all station-hours.
inline Baseline estimate_baseline(const std::vector<ConsensusResult>& records, const TimeWindow& history) {
    auto series = station_mention_counts(records, history, 0);
    Baseline b;
    const auto n = static_cast<double>(series.hours.size());
    double gsum = 0, gsq = 0, gn = 0;
    for (const auto& row : series.stations) {
        double sum = 0, sq = 0;
        for (auto c : row.counts) {
            sum += static_cast<double>(c);
            sq += static_cast<double>(c) * static_cast<double>(c);
        }
        const double mean = sum / n;
        b.per_station[row.station] = {mean, std::sqrt(std::max(0.0, sq / n - mean * mean))};
        gsum += sum;
        gsq += sq;
        gn += n;
    }
    if (gn > 0) {
        const double mean = gsum / gn;
        b.global = {mean, std::sqrt(std::max(0.0, gsq / gn - mean * mean))};
    }
    return b;
}

struct SpikeAlert {
    std::string station;
    Timestamp hour_start;
    Timestamp hour_end;
    std::size_t observed = 0;
    double baseline_mean = 0;
    double baseline_stdev = 0;
    double z = 0;
};

struct SpikeOptions {
    double z_threshold = 3.0;
    std::size_t min_count = 5;
};

inline double spike_z(double observed, const HourlyStats& s) { return (observed - s.mean) / std::max(s.stdev, 1.0); }

/// Alerts ordered by hour, then station.
inline std::vector<SpikeAlert> detect_spikes(const StationSeries& series, const Baseline& baseline,
                                             const SpikeOptions& opt = {}) {
    std::vector<SpikeAlert> out;
    for (const auto& row : series.stations) {
        const auto& stats = baseline.for_station(row.station);
        for (std::size_t h = 0; h < row.counts.size(); ++h) {
            const auto obs = row.counts[h];
            const double z = spike_z(static_cast<double>(obs), stats);
            if (obs < opt.min_count || z < opt.z_threshold) continue;
            out.push_back({row.station, series.hours[h], series.hours[h] + std::chrono::hours(1), obs, stats.mean,
                           stats.stdev, z});
        }
    }
    std::sort(out.begin(), out.end(), [](const SpikeAlert& a, const SpikeAlert& b) {
        return a.hour_start != b.hour_start ? a.hour_start < b.hour_start : a.station < b.station;
    });
    return out;
}

inline Json to_json(const SpikeAlert& a) {
    return {{"station", a.station},
            {"from", format_iso8601(a.hour_start)},
            {"to", format_iso8601(a.hour_end)},
            {"observed", a.observed},
            {"baseline_mean", a.baseline_mean},
            {"baseline_stdev", a.baseline_stdev},
            {"z", a.z}};
}

inline Json to_json(const std::vector<SpikeAlert>& alerts) {
    Json j = Json::array();
    for (const auto& a : alerts) j.push_back(to_json(a));
    return j;
}

// ---------------------------------------------------------------------------
// Drill-down

/// Records at a canonical station inside the window, by time then tweet id.
inline std::vector<ConsensusResult> drill_down(const std::vector<ConsensusResult>& records, std::string_view station,
                                               const TimeWindow& window,
                                               std::optional<Sentiment> sentiment = std::nullopt) {
    require_window(window);
    std::vector<ConsensusResult> out;
    for (const auto& r : records) {
        if (r.record.station_canonical != station || !window.contains(r.created_at)) continue;
        if (sentiment && r.record.sentiment != *sentiment) continue;
        out.push_back(r);
    }
    std::stable_sort(out.begin(), out.end(), [](const ConsensusResult& a, const ConsensusResult& b) {
        return a.created_at != b.created_at ? a.created_at < b.created_at : a.record.tweet_id < b.record.tweet_id;
    });
    return out;
}

}  // namespace tpulse
