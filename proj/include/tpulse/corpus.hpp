#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "tpulse/csv.hpp"
#include "tpulse/error.hpp"
#include "tpulse/taxonomy.hpp"
#include "tpulse/text.hpp"
#include "tpulse/timeutil.hpp"

namespace tpulse {

struct TweetRecord {
    std::string id;
    Timestamp created_at;
    std::string author;
    std::string text;

    friend bool operator==(const TweetRecord&, const TweetRecord&) = default;
};

struct Corpus {
    std::vector<TweetRecord> records;
    std::size_t skip_count = 0;
};

namespace detail {

inline Corpus tweets_from_table(const csv::Table& table, bool strict, std::string_view origin) {
    static constexpr std::array<std::string_view, 4> required{"id", "created_at", "author", "text"};
    std::array<std::size_t, 4> col{};
    for (std::size_t i = 0; i < required.size(); ++i) {
        auto c = table.column(required[i]);
        if (!c) throw DataError(std::string(origin) + ": missing required column '" + std::string(required[i]) + "'");
        col[i] = *c;
    }

    Corpus corpus;
    std::unordered_set<std::string> seen;
    for (const auto& row : table.rows) {
        auto reject = [&](const std::string& why) {
            if (strict) throw DataError(std::string(origin) + ": row " + std::to_string(row.number) + ": " + why);
            ++corpus.skip_count;
        };
        if (row.fields.size() != table.header.size()) {
            reject("expected " + std::to_string(table.header.size()) + " fields, got " +
                   std::to_string(row.fields.size()));
            continue;
        }
        TweetRecord rec;
        rec.id = text::trim(row.fields[col[0]]);
        rec.author = text::trim(row.fields[col[2]]);
        rec.text = row.fields[col[3]];
        if (rec.id.empty()) {
            reject("empty id");
            continue;
        }
        auto ts = parse_iso8601(row.fields[col[1]]);
        if (!ts) {
            reject("unparseable created_at '" + row.fields[col[1]] + "'");
            continue;
        }
        rec.created_at = *ts;
        if (text::trim_view(rec.text).empty()) {
            reject("empty text");
            continue;
        }
        if (!seen.insert(rec.id).second) {
            reject("duplicate id '" + rec.id + "'");
            continue;
        }
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

}  // namespace detail

/// Parse tweets from an in-memory CSV document (header: id,created_at,author,text).
inline Corpus parse_tweets(std::string_view doc, bool strict, std::string_view origin = "<inline>") {
    return detail::tweets_from_table(csv::parse(doc), strict, origin);
}

/// Load a tweet CSV. Lenient mode counts rejected rows in skip_count;
/// strict mode throws DataError naming the first bad row.
inline Corpus load_tweets(const std::string& path, bool strict) {
    if (!std::filesystem::exists(path)) throw DataError("no such file: " + path);
    return detail::tweets_from_table(csv::read(path), strict, path);
}

/// Text key used for duplicate detection: case-folded, whitespace collapsed.
inline std::string dedup_key(std::string_view text) { return text::to_lower(text::collapse_whitespace(text)); }

inline bool is_retweet(std::string_view text) { return text::trim_view(text).starts_with("RT @"); }

/// Drop retweets and texts duplicating an earlier record. Survivors keep their order.
inline Corpus dedup_filter(const Corpus& corpus) {
    Corpus out;
    out.skip_count = corpus.skip_count;
    std::unordered_set<std::string> seen;
    for (const auto& rec : corpus.records) {
        if (is_retweet(rec.text)) continue;
        if (!seen.insert(dedup_key(rec.text)).second) continue;
        out.records.push_back(rec);
    }
    return out;
}

/// Toronto local time without DST.
inline constexpr int kDefaultUtcOffsetMinutes = -5 * 60;

inline int local_hour(Timestamp ts, int utc_offset_minutes = kDefaultUtcOffsetMinutes) noexcept {
    auto secs = epoch_seconds(ts) + static_cast<std::int64_t>(utc_offset_minutes) * 60;
    auto in_day = ((secs % 86400) + 86400) % 86400;
    return static_cast<int>(in_day / 3600);
}

/// Tweet counts per local hour of day.
inline std::array<std::size_t, 24> hourly_histogram(const Corpus& corpus,
                                                    int utc_offset_minutes = kDefaultUtcOffsetMinutes) {
    std::array<std::size_t, 24> counts{};
    for (const auto& rec : corpus.records) ++counts[static_cast<std::size_t>(local_hour(rec.created_at, utc_offset_minutes))];
    return counts;
}

// ---------------------------------------------------------------------------
// Labelled benchmark datasets

struct LabeledExample {
    std::string text;
    std::string label;
};

struct DatasetSplit {
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> test;
    std::vector<std::string> label_set;

    std::size_t label_index(std::string_view label) const {
        for (std::size_t i = 0; i < label_set.size(); ++i)
            if (label_set[i] == label) return i;
        throw DataError("label '" + std::string(label) + "' not in label set");
    }
};

struct LabelSchema {
    std::string name;
    std::vector<std::string> labels;
    std::vector<std::pair<std::string, std::string>> aliases;  // label_key(alias) -> canonical label

    /// Canonical label for a raw value, or empty when the value is outside the set.
    std::string canonical(std::string_view raw) const {
        auto k = text::label_key(raw);
        for (const auto& l : labels)
            if (text::label_key(l) == k) return l;
        for (const auto& [alias, label] : aliases)
            if (alias == k) return label;
        return {};
    }
};

inline LabelSchema label_schema(std::string_view name) {
    if (name == "sentiment5") {
        return {"sentiment5",
                {"0", "1", "2", "3", "4"},
                {{"negative", "0"},
                 {"somewhat_negative", "1"},
                 {"neutral", "2"},
                 {"somewhat_positive", "3"},
                 {"positive", "4"}}};
    }
    if (name == "sarcasm4") return {"sarcasm4", {"irony", "sarcasm", "regular", "figurative"}, {}};
    if (name == "topic10") {
        LabelSchema s{"topic10", {}, {}};
        for (auto t : kTopics) s.labels.emplace_back(to_string(t));
        return s;
    }
    throw UsageError("unknown dataset schema '" + std::string(name) + "' (expected sentiment5, sarcasm4 or topic10)");
}

namespace detail {

inline csv::Dialect dialect_for(const std::filesystem::path& p) {
    if (p.extension() == ".tsv") return {'\t', false};
    return {};
}

inline std::optional<std::size_t> first_column(const csv::Table& t, std::initializer_list<std::string_view> names) {
    for (auto n : names)
        if (auto c = t.column(n)) return c;
    return std::nullopt;
}

/// Appends rows to train/test. Rows go to test when a `split` column says so.
inline void read_labeled_file(const std::filesystem::path& p, const LabelSchema& schema, bool force_test,
                              DatasetSplit& out) {
    if (!std::filesystem::exists(p)) throw DataError("no such file: " + p.string());
    auto table = csv::read(p.string(), dialect_for(p));
    auto text_col = first_column(table, {"text", "phrase", "tweet"});
    auto label_col = first_column(table, {"label", "sentiment", "class"});
    if (!text_col || !label_col) throw DataError(p.string() + ": expected columns text,label");
    auto split_col = table.column("split");
    for (const auto& row : table.rows) {
        if (row.fields.size() <= std::max(*text_col, *label_col))
            throw DataError(p.string() + ": row " + std::to_string(row.number) + ": too few fields");
        const auto& raw = row.fields[*label_col];
        auto label = schema.canonical(raw);
        if (label.empty())
            throw DataError(p.string() + ": row " + std::to_string(row.number) + ": label '" + raw +
                            "' not in " + schema.name + " label set");
        bool to_test = force_test;
        if (split_col && *split_col < row.fields.size()) to_test = text::iequals(text::trim_view(row.fields[*split_col]), "test");
        (to_test ? out.test : out.train).push_back({row.fields[*text_col], std::move(label)});
    }
}

}  // namespace detail

/// Load a labelled dataset. `path` is either a file (all rows train, unless a
/// `split` column marks test rows) or a directory holding train.{csv,tsv} and
/// optionally test.{csv,tsv}.
inline DatasetSplit load_labeled(const std::string& path, std::string_view schema_name) {
    auto schema = label_schema(schema_name);
    DatasetSplit out;
    out.label_set = schema.labels;
    std::filesystem::path p(path);
    if (std::filesystem::is_directory(p)) {
        bool found = false;
        for (auto ext : {".csv", ".tsv"}) {
            if (std::filesystem::exists(p / ("train" + std::string(ext)))) {
                detail::read_labeled_file(p / ("train" + std::string(ext)), schema, false, out);
                found = true;
            }
            if (std::filesystem::exists(p / ("test" + std::string(ext))))
                detail::read_labeled_file(p / ("test" + std::string(ext)), schema, true, out);
        }
        if (!found) throw DataError(path + ": directory has no train.csv or train.tsv");
    } else {
        detail::read_labeled_file(p, schema, false, out);
    }
    return out;
}

}  // namespace tpulse
