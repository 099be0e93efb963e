#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tpulse/corpus.hpp"
#include "tpulse/gateway.hpp"
#include "tpulse/output_parser.hpp"
#include "tpulse/prompt.hpp"
#include "tpulse/taxonomy.hpp"
#include "tpulse/timeutil.hpp"

namespace tpulse {

enum class Field { station, sentiment, sarcasm, problem_topic, problem_summary };

inline constexpr std::array<Field, 5> kFields{Field::station, Field::sentiment, Field::sarcasm, Field::problem_topic,
                                              Field::problem_summary};
/// Fields that are voted on and carry an agreement ratio.
inline constexpr std::array<Field, 4> kVotedFields{Field::station, Field::sentiment, Field::sarcasm,
                                                   Field::problem_topic};

inline std::string_view to_string(Field f) noexcept {
    switch (f) {
        case Field::station: return "station";
        case Field::sentiment: return "sentiment";
        case Field::sarcasm: return "sarcasm";
        case Field::problem_topic: return "problem_topic";
        case Field::problem_summary: return "problem_summary";
    }
    return "station";
}

inline std::optional<Field> field_from_string(std::string_view s) {
    auto k = text::label_key(s);
    if (k == "station" || k == "station_mention") return Field::station;
    for (auto f : kFields)
        if (k == to_string(f)) return f;
    return std::nullopt;
}

/// Raw key in RawExtraction that feeds a field.
inline std::string_view raw_key(Field f) noexcept {
    return f == Field::station ? std::string_view("station_mention") : to_string(f);
}

enum class FieldStatus {
    parsed,       // value came from the model output
    defaulted,    // key absent; default used
    unparseable,  // key present but value outside the field's gate; default used
};

inline std::string_view to_string(FieldStatus s) noexcept {
    switch (s) {
        case FieldStatus::parsed: return "parsed";
        case FieldStatus::defaulted: return "defaulted";
        case FieldStatus::unparseable: return "unparseable";
    }
    return "defaulted";
}

struct FieldFlag {
    FieldStatus status = FieldStatus::defaulted;
    bool human_verified = false;

    friend bool operator==(const FieldFlag&, const FieldFlag&) = default;
};

inline constexpr std::size_t kSummaryMaxChars = 280;

struct ExtractedRecord {
    std::string tweet_id;
    std::optional<std::string> station_mention;
    std::optional<std::string> station_canonical;
    Sentiment sentiment = Sentiment::neutral;
    bool sarcasm = false;
    TopicField problem_topic;
    std::string problem_summary;
    std::map<Field, FieldFlag> flags;

    FieldFlag flag(Field f) const {
        auto it = flags.find(f);
        return it == flags.end() ? FieldFlag{} : it->second;
    }
    bool parsed(Field f) const { return flag(f).status == FieldStatus::parsed || flag(f).human_verified; }

    friend bool operator==(const ExtractedRecord&, const ExtractedRecord&) = default;
};

// ---------------------------------------------------------------------------
// Field gates

inline bool is_agency_alias(std::string_view mention) {
    auto k = text::to_lower(text::collapse_whitespace(mention));
    return k == "ttc" || k == "ttc service" || k == "ttc customer service" || k == "the ttc" || k == "@ttcnotices" ||
           k == "ttcnotices" || k == "toronto transit commission";
}

inline bool is_null_literal(std::string_view v) {
    auto k = text::label_key(v);
    return k.empty() || k == "none" || k == "null" || k == "n/a" || k == "na" || k == "nil" || k == "unknown" ||
           k == "not_mentioned" || k == "no_station" || k == "not_specified";
}

inline std::optional<Sentiment> coerce_sentiment(std::string_view v) {
    if (auto s = sentiment_from_string(v)) return s;
    static const std::map<std::string, Sentiment, std::less<>> syn{
        {"neg", Sentiment::negative},           {"very_negative", Sentiment::negative},
        {"somewhat_negative", Sentiment::negative}, {"-1", Sentiment::negative},
        {"bad", Sentiment::negative},           {"neu", Sentiment::neutral},
        {"mixed", Sentiment::neutral},          {"0", Sentiment::neutral},
        {"pos", Sentiment::positive},           {"very_positive", Sentiment::positive},
        {"somewhat_positive", Sentiment::positive}, {"1", Sentiment::positive},
        {"+1", Sentiment::positive},            {"good", Sentiment::positive},
    };
    auto it = syn.find(text::label_key(v));
    if (it == syn.end()) return std::nullopt;
    return it->second;
}

inline std::optional<bool> coerce_sarcasm(std::string_view v) {
    static const std::map<std::string, bool, std::less<>> syn{
        {"true", true},           {"yes", true},           {"y", true},
        {"1", true},              {"sarcastic", true},     {"sarcasm", true},
        {"is_sarcastic", true},   {"ironic", true},        {"false", false},
        {"no", false},            {"n", false},            {"0", false},
        {"not_sarcastic", false}, {"non_sarcastic", false}, {"not_sarcasm", false},
        {"none", false},          {"regular", false},      {"literal", false},
        {"sincere", false},
    };
    auto it = syn.find(text::label_key(v));
    if (it == syn.end()) return std::nullopt;
    return it->second;
}

/// nullopt = unparseable; inner nullopt = "none".
inline std::optional<TopicField> coerce_topic(std::string_view v) {
    if (is_null_literal(v) || text::label_key(v) == "no_problem") return TopicField{};
    if (auto t = topic_from_string(v)) return TopicField{*t};
    static const std::map<std::string, Topic, std::less<>> syn{
        {"winter", Topic::winter_maintenance},          {"snow", Topic::winter_maintenance},
        {"schedule", Topic::temporal_availability},     {"service_hours", Topic::temporal_availability},
        {"frequency", Topic::temporal_availability},    {"staff", Topic::interaction_with_staff},
        {"staff_interaction", Topic::interaction_with_staff}, {"customer_service", Topic::interaction_with_staff},
        {"repair", Topic::maintenance},                 {"cleanliness", Topic::maintenance},
        {"capacity", Topic::capacity_availability},     {"crowding", Topic::capacity_availability},
        {"overcrowding", Topic::capacity_availability}, {"information", Topic::communication},
        {"announcements", Topic::communication},        {"accessible", Topic::accessibility},
        {"comfort", Topic::ride_quality},               {"delay", Topic::travel_time},
        {"delays", Topic::travel_time},                 {"travel", Topic::travel_time},
        {"safety", Topic::safety_and_security},         {"security", Topic::safety_and_security},
        {"safety_security", Topic::safety_and_security},
    };
    auto it = syn.find(text::label_key(v));
    if (it == syn.end()) return std::nullopt;
    return TopicField{it->second};
}

inline std::string cap_summary(std::string_view s) {
    return text::utf8_truncate_chars(text::collapse_whitespace(s), kSummaryMaxChars);
}

inline std::optional<std::string> clean_station(std::string_view v) {
    auto s = text::collapse_whitespace(v);
    if (is_null_literal(s) || is_agency_alias(s)) return std::nullopt;
    return s;
}

/// Enum gate over recovered pairs. Missing keys are defaulted, out-of-gate
/// values are defaulted and flagged unparseable.
inline ExtractedRecord canonicalize(const RawExtraction& raw, std::string tweet_id) {
    ExtractedRecord r;
    r.tweet_id = std::move(tweet_id);
    auto value = [&](Field f) -> const std::string* {
        auto it = raw.recovered.find(std::string(raw_key(f)));
        return it == raw.recovered.end() ? nullptr : &it->second;
    };
    auto set = [&](Field f, FieldStatus st) { r.flags[f] = {st, false}; };

    if (auto v = value(Field::station)) {
        r.station_mention = clean_station(*v);
        set(Field::station, FieldStatus::parsed);
    } else {
        set(Field::station, FieldStatus::defaulted);
    }
    if (auto v = value(Field::sentiment)) {
        auto s = coerce_sentiment(*v);
        r.sentiment = s.value_or(Sentiment::neutral);
        set(Field::sentiment, s ? FieldStatus::parsed : FieldStatus::unparseable);
    } else {
        set(Field::sentiment, FieldStatus::defaulted);
    }
    if (auto v = value(Field::sarcasm)) {
        auto s = coerce_sarcasm(*v);
        r.sarcasm = s.value_or(false);
        set(Field::sarcasm, s ? FieldStatus::parsed : FieldStatus::unparseable);
    } else {
        set(Field::sarcasm, FieldStatus::defaulted);
    }
    if (auto v = value(Field::problem_topic)) {
        auto t = coerce_topic(*v);
        r.problem_topic = t.value_or(TopicField{});
        set(Field::problem_topic, t ? FieldStatus::parsed : FieldStatus::unparseable);
    } else {
        set(Field::problem_topic, FieldStatus::defaulted);
    }
    if (auto v = value(Field::problem_summary)) {
        r.problem_summary = is_null_literal(*v) ? std::string() : cap_summary(*v);
        set(Field::problem_summary, FieldStatus::parsed);
    } else {
        set(Field::problem_summary, FieldStatus::defaulted);
    }
    return r;
}

/// Re-apply the gates to an existing record (flags kept).
inline ExtractedRecord canonicalize(ExtractedRecord r) {
    if (r.station_mention) r.station_mention = clean_station(*r.station_mention);
    if (!r.station_mention) r.station_canonical.reset();
    r.problem_summary = cap_summary(r.problem_summary);
    for (auto f : kFields) r.flags.try_emplace(f);
    return r;
}

/// Inverse of canonicalize for parsed fields: feeding the result back through
/// canonicalize reproduces the same values.
inline RawExtraction to_raw(const ExtractedRecord& r) {
    RawExtraction raw;
    auto put = [&](Field f, std::string v) {
        if (r.flag(f).status == FieldStatus::parsed || r.flag(f).human_verified)
            raw.recovered.emplace(std::string(raw_key(f)), std::move(v));
    };
    put(Field::station, r.station_mention.value_or("none"));
    put(Field::sentiment, std::string(to_string(r.sentiment)));
    put(Field::sarcasm, r.sarcasm ? "true" : "false");
    put(Field::problem_topic, topic_field_string(r.problem_topic));
    put(Field::problem_summary, r.problem_summary);
    return raw;
}

// ---------------------------------------------------------------------------
// Consensus

inline constexpr double kReviewAgreementThreshold = 2.0 / 3.0;

struct ConsensusResult {
    ExtractedRecord record;
    std::map<Field, double> agreement;  // voted fields only
    int sample_count = 0;               // samples that produced a reply
    Timestamp created_at{};
    std::string text;

    std::vector<Field> low_agreement_fields() const {
        std::vector<Field> out;
        for (auto f : kVotedFields) {
            auto it = agreement.find(f);
            double a = it == agreement.end() ? 0.0 : it->second;
            if (a < kReviewAgreementThreshold - 1e-12 && !record.flag(f).human_verified) out.push_back(f);
        }
        return out;
    }
    bool review_pending() const { return !low_agreement_fields().empty(); }
};

namespace detail {

/// Mode over (sample index, key) votes. Ties go to the value whose first
/// vote came earliest. Returns the winning key, its count and the index of
/// its first vote.
struct Vote {
    std::size_t sample;
    std::string key;
};

struct ModeResult {
    std::string key;
    std::size_t count = 0;
    std::size_t first_sample = 0;
};

inline std::optional<ModeResult> mode_of(const std::vector<Vote>& votes) {
    if (votes.empty()) return std::nullopt;
    std::vector<ModeResult> tallies;
    for (const auto& v : votes) {
        auto it = std::find_if(tallies.begin(), tallies.end(), [&](const ModeResult& m) { return m.key == v.key; });
        if (it == tallies.end()) tallies.push_back({v.key, 1, v.sample});
        else ++it->count;
    }
    // tallies are in first-occurrence order, so the first maximum is the tie winner
    auto best = tallies.front();
    for (const auto& t : tallies)
        if (t.count > best.count) best = t;
    return best;
}

inline std::string vote_key(const ExtractedRecord& r, Field f) {
    switch (f) {
        case Field::station: return r.station_mention ? text::to_lower(*r.station_mention) : std::string("\x01none");
        case Field::sentiment: return std::string(to_string(r.sentiment));
        case Field::sarcasm: return r.sarcasm ? "true" : "false";
        case Field::problem_topic: return topic_field_string(r.problem_topic);
        case Field::problem_summary: return r.problem_summary;
    }
    return {};
}

inline void copy_field(ExtractedRecord& dst, const ExtractedRecord& src, Field f) {
    switch (f) {
        case Field::station:
            dst.station_mention = src.station_mention;
            dst.station_canonical = src.station_canonical;
            break;
        case Field::sentiment: dst.sentiment = src.sentiment; break;
        case Field::sarcasm: dst.sarcasm = src.sarcasm; break;
        case Field::problem_topic: dst.problem_topic = src.problem_topic; break;
        case Field::problem_summary: dst.problem_summary = src.problem_summary; break;
    }
}

}  // namespace detail

/// Per-field majority vote over k samples of one tweet.
inline ConsensusResult consensus(const std::vector<ExtractedRecord>& samples) {
    if (samples.empty()) throw UsageError("consensus: no samples");
    for (const auto& s : samples)
        if (s.tweet_id != samples.front().tweet_id)
            throw DataError("consensus: mixed tweet ids '" + samples.front().tweet_id + "' and '" + s.tweet_id + "'");

    ConsensusResult out;
    out.record.tweet_id = samples.front().tweet_id;
    out.sample_count = static_cast<int>(samples.size());
    std::vector<std::size_t> wins(samples.size(), 0);

    for (auto f : kVotedFields) {
        std::vector<detail::Vote> votes;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].parsed(f)) votes.push_back({i, detail::vote_key(samples[i], f)});
        auto m = detail::mode_of(votes);
        if (!m) {
            out.agreement[f] = 0.0;
            out.record.flags[f] = {FieldStatus::defaulted, false};
            continue;
        }
        detail::copy_field(out.record, samples[m->first_sample], f);
        out.record.flags[f] = {FieldStatus::parsed, false};
        out.agreement[f] = static_cast<double>(m->count) / static_cast<double>(votes.size());
        for (const auto& v : votes)
            if (v.key == m->key) ++wins[v.sample];
    }

    // Summary from the parsed sample agreeing with the most winning values; earliest on ties.
    std::optional<std::size_t> pick;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].parsed(Field::problem_summary) && (!pick || wins[i] > wins[*pick])) pick = i;
    if (pick) {
        out.record.problem_summary = samples[*pick].problem_summary;
        out.record.flags[Field::problem_summary] = {FieldStatus::parsed, false};
    } else {
        out.record.flags[Field::problem_summary] = {FieldStatus::defaulted, false};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline Json to_json(const ExtractedRecord& r) {
    Json flags = Json::object();
    for (auto f : kFields) {
        auto fl = r.flag(f);
        flags[std::string(to_string(f))] = {{"status", to_string(fl.status)}, {"human_verified", fl.human_verified}};
    }
    return {{"tweet_id", r.tweet_id},
            {"station_mention", r.station_mention ? Json(*r.station_mention) : Json(nullptr)},
            {"station_canonical", r.station_canonical ? Json(*r.station_canonical) : Json(nullptr)},
            {"sentiment", to_string(r.sentiment)},
            {"sarcasm", r.sarcasm},
            {"problem_topic", topic_field_string(r.problem_topic)},
            {"problem_summary", r.problem_summary},
            {"field_flags", std::move(flags)}};
}

inline ExtractedRecord extracted_record_from_json(const Json& j) {
    try {
        ExtractedRecord r;
        r.tweet_id = j.at("tweet_id").get<std::string>();
        if (!j.at("station_mention").is_null()) r.station_mention = j.at("station_mention").get<std::string>();
        if (j.contains("station_canonical") && !j.at("station_canonical").is_null())
            r.station_canonical = j.at("station_canonical").get<std::string>();
        auto s = sentiment_from_string(j.at("sentiment").get<std::string>());
        if (!s) throw DataError("bad sentiment");
        r.sentiment = *s;
        r.sarcasm = j.at("sarcasm").get<bool>();
        auto t = coerce_topic(j.at("problem_topic").get<std::string>());
        if (!t) throw DataError("bad problem_topic");
        r.problem_topic = *t;
        r.problem_summary = j.at("problem_summary").get<std::string>();
        if (j.contains("field_flags"))
            for (const auto& [name, fl] : j.at("field_flags").items()) {
                auto f = field_from_string(name);
                if (!f) continue;
                auto st = fl.at("status").get<std::string>();
                FieldFlag flag;
                flag.status = st == "parsed" ? FieldStatus::parsed
                              : st == "unparseable" ? FieldStatus::unparseable
                                                    : FieldStatus::defaulted;
                flag.human_verified = fl.value("human_verified", false);
                r.flags[*f] = flag;
            }
        return r;
    } catch (const Json::exception& e) {
        throw DataError(std::string("extracted record: ") + e.what());
    }
}

inline Json to_json(const ConsensusResult& c) {
    Json j = to_json(c.record);
    Json agr = Json::object();
    for (const auto& [f, a] : c.agreement) agr[std::string(to_string(f))] = a;
    j["agreement"] = std::move(agr);
    j["sample_count"] = c.sample_count;
    j["created_at"] = format_iso8601(c.created_at);
    j["text"] = c.text;
    Json low = Json::array();
    for (auto f : c.low_agreement_fields()) low.push_back(to_string(f));
    j["low_agreement_fields"] = std::move(low);
    j["review_pending"] = c.review_pending();
    return j;
}

inline ConsensusResult consensus_from_json(const Json& j) {
    ConsensusResult c;
    c.record = extracted_record_from_json(j);
    try {
        for (const auto& [name, a] : j.at("agreement").items())
            if (auto f = field_from_string(name)) c.agreement[*f] = a.get<double>();
        c.sample_count = j.at("sample_count").get<int>();
        auto ts = parse_iso8601(j.at("created_at").get<std::string>());
        if (!ts) throw DataError("consensus result: bad created_at");
        c.created_at = *ts;
        c.text = j.value("text", "");
    } catch (const Json::exception& e) {
        throw DataError(std::string("consensus result: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Batch pipeline

struct ExtractOptions {
    int k = 3;
    double temperature = 0.7;
    int max_tokens = 256;
    int workers = 4;
    std::string model_id;  // empty: gateway config's model
};

/// Mention -> canonical stop name, or nullopt when no stop matches.
using StationNormalizer = std::function<std::optional<std::string>(const std::string&)>;
/// Tweet -> retrieved reference text for the prompt.
using ContextProvider = std::function<std::optional<std::string>(const TweetRecord&)>;

struct BatchItem {
    std::string tweet_id;
    std::optional<ConsensusResult> result;
    std::string error;
    std::vector<std::string> diagnostics;

    bool ok() const noexcept { return result.has_value(); }
};

inline Json to_json(const BatchItem& item) {
    if (item.result) {
        auto j = to_json(*item.result);
        if (!item.diagnostics.empty()) j["diagnostics"] = item.diagnostics;
        return j;
    }
    return {{"tweet_id", item.tweet_id}, {"error", item.error}, {"diagnostics", item.diagnostics}};
}

/// Extract one tweet: k samples, parse, canonicalize, vote, normalize.
inline BatchItem extract_one(const TweetRecord& tweet, Gateway& gateway, const PromptTemplate& tpl,
                             const ExtractOptions& opt, const StationNormalizer* normalizer,
                             const ContextProvider* context) {
    BatchItem item;
    item.tweet_id = tweet.id;
    try {
        std::optional<std::string> ctx;
        if (context && *context) ctx = (*context)(tweet);
        CompletionRequest req{opt.model_id.empty() ? gateway.config().model_id : opt.model_id,
                              render_prompt(tpl, tweet, ctx), opt.temperature, opt.max_tokens};
        std::vector<ExtractedRecord> samples;
        std::string last_error;
        for (int s = 0; s < opt.k; ++s) {
            try {
                auto reply = gateway.complete(req).texts.front();
                auto raw = parse_output(reply);
                for (const auto& d : raw.diagnostics)
                    item.diagnostics.push_back("sample " + std::to_string(s + 1) + ": " + d);
                samples.push_back(canonicalize(raw, tweet.id));
            } catch (const UpstreamError& e) {
                last_error = e.what();
                item.diagnostics.push_back("sample " + std::to_string(s + 1) + ": " + e.what());
            }
        }
        if (samples.empty()) {
            item.error = "all " + std::to_string(opt.k) + " samples failed: " + last_error;
            return item;
        }
        auto c = consensus(samples);
        c.created_at = tweet.created_at;
        c.text = tweet.text;
        if (normalizer && *normalizer && c.record.station_mention)
            c.record.station_canonical = (*normalizer)(*c.record.station_mention);
        item.result = std::move(c);
    } catch (const Error& e) {
        item.error = e.what();
    }
    return item;
}

/// Runs extraction over a corpus with a small worker pool; output order
/// matches input order and per-tweet failures become error items.
inline std::vector<BatchItem> extract_batch(const std::vector<TweetRecord>& tweets, Gateway& gateway,
                                            const PromptTemplate& tpl, const ExtractOptions& opt,
                                            const StationNormalizer* normalizer = nullptr,
                                            const ContextProvider* context = nullptr,
                                            const std::function<void(std::size_t)>& on_progress = {}) {
    if (opt.k < 1) throw UsageError("extract_batch: k must be >= 1");
    tpl.validate();
    std::vector<BatchItem> out(tweets.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < tweets.size();) {
            out[i] = extract_one(tweets[i], gateway, tpl, opt, normalizer, context);
            auto d = ++done;
            if (on_progress) on_progress(d);
        }
    };
    const auto n = static_cast<std::size_t>(std::max(1, opt.workers));
    if (n == 1 || tweets.size() < 2) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(n, tweets.size()); ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    return out;
}

inline std::string to_ndjson(const std::vector<BatchItem>& items) {
    std::string out;
    for (const auto& it : items) {
        out += to_json(it).dump();
        out += '\n';
    }
    return out;
}

}  // namespace tpulse
