#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpulse/error.hpp"
#include "tpulse/json_io.hpp"
#include "tpulse/taxonomy.hpp"
#include "tpulse/tokenize.hpp"

namespace tpulse {

/// Problem topic -> lower-case keyword tokens.
using LexiconMap = std::map<Topic, std::vector<std::string>>;

/// Keyword-frequency topic labeller. Returns the topic with the most keyword
/// hits; count ties go to the rarer topic (earlier in kTopics). No hits -> none.
inline TopicField lexicon_label(std::string_view text, const LexiconMap& lexicon) {
    if (lexicon.empty()) throw UsageError("lexicon_label: empty lexicon");
    std::unordered_map<std::string, std::vector<Topic>> owners;
    for (const auto& [topic, words] : lexicon)
        for (const auto& w : words) owners[w].push_back(topic);

    std::map<Topic, std::size_t> hits;
    for (const auto& tok : tokenize(text)) {
        auto it = owners.find(tok);
        if (it == owners.end()) continue;
        for (auto t : it->second) ++hits[t];
    }
    TopicField best;
    std::size_t best_count = 0;
    for (auto t : kTopics) {
        auto it = hits.find(t);
        if (it != hits.end() && it->second > best_count) {
            best = t;
            best_count = it->second;
        }
    }
    return best;
}

inline LexiconMap default_lexicon() {
    return {
        {Topic::winter_maintenance, {"snow", "ice", "icy", "salt", "plow", "plowed", "slush", "slippery", "freezing"}},
        {Topic::temporal_availability, {"schedule", "frequency", "headway", "overnight", "sunday", "hours", "closure", "closed"}},
        {Topic::interaction_with_staff, {"rude", "driver", "operator", "staff", "collector", "employee", "yelled", "attitude"}},
        {Topic::maintenance, {"broken", "repair", "escalator", "elevator", "dirty", "leak", "repairs"}},
        {Topic::capacity_availability, {"crowded", "packed", "full", "capacity", "crammed", "overcrowded", "line", "lineup"}},
        {Topic::communication, {"announcement", "announcements", "update", "info", "information", "notice", "alert", "sign"}},
        {Topic::accessibility, {"wheelchair", "accessible", "accessibility", "stroller", "ramp", "stairs", "wheel", "trans"}},
        {Topic::ride_quality, {"smell", "hot", "cold", "bumpy", "jerky", "seat", "seats", "noisy", "aircon"}},
        {Topic::travel_time, {"delay", "delays", "delayed", "late", "slow", "wait", "waiting", "stuck", "minutes"}},
        {Topic::safety_and_security, {"police", "safety", "unsafe", "fight", "assault", "security", "injury", "emergency", "danger"}},
    };
}

inline Json to_json(const LexiconMap& lex) {
    Json j = Json::object();
    for (const auto& [t, words] : lex) j[std::string(to_string(t))] = words;
    return j;
}

inline LexiconMap lexicon_from_json(const Json& j) {
    LexiconMap lex;
    for (const auto& [key, words] : j.items()) {
        auto t = topic_from_string(key);
        if (!t) throw DataError("lexicon: unknown topic '" + key + "'");
        for (const auto& w : words) lex[*t].push_back(text::to_lower(w.get<std::string>()));
    }
    return lex;
}

}  // namespace tpulse
