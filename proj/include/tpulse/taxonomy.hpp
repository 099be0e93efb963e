#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "tpulse/text.hpp"

namespace tpulse {

enum class Sentiment { negative, neutral, positive };

inline constexpr std::array<Sentiment, 3> kSentiments{Sentiment::negative, Sentiment::neutral, Sentiment::positive};

inline std::string_view to_string(Sentiment s) noexcept {
    switch (s) {
        case Sentiment::negative: return "negative";
        case Sentiment::neutral: return "neutral";
        case Sentiment::positive: return "positive";
    }
    return "neutral";
}

inline std::optional<Sentiment> sentiment_from_string(std::string_view s) {
    auto k = text::label_key(s);
    if (k == "negative") return Sentiment::negative;
    if (k == "neutral") return Sentiment::neutral;
    if (k == "positive") return Sentiment::positive;
    return std::nullopt;
}

/// The ten transit service aspects, ordered by ascending labelled-tweet count
/// in the reference TTC dataset (winter maintenance is the rarest). The order
/// is significant: it breaks lexicon ties in favour of rarer categories.
enum class Topic {
    winter_maintenance,
    temporal_availability,
    interaction_with_staff,
    maintenance,
    capacity_availability,
    communication,
    accessibility,
    ride_quality,
    travel_time,
    safety_and_security,
};

inline constexpr std::size_t kTopicCount = 10;

inline constexpr std::array<Topic, kTopicCount> kTopics{
    Topic::winter_maintenance, Topic::temporal_availability, Topic::interaction_with_staff,
    Topic::maintenance,        Topic::capacity_availability, Topic::communication,
    Topic::accessibility,      Topic::ride_quality,          Topic::travel_time,
    Topic::safety_and_security,
};

inline std::string_view to_string(Topic t) noexcept {
    switch (t) {
        case Topic::winter_maintenance: return "winter_maintenance";
        case Topic::temporal_availability: return "temporal_availability";
        case Topic::interaction_with_staff: return "interaction_with_staff";
        case Topic::maintenance: return "maintenance";
        case Topic::capacity_availability: return "capacity_availability";
        case Topic::communication: return "communication";
        case Topic::accessibility: return "accessibility";
        case Topic::ride_quality: return "ride_quality";
        case Topic::travel_time: return "travel_time";
        case Topic::safety_and_security: return "safety_and_security";
    }
    return "maintenance";
}

/// Accepts "Travel Time", "travel_time", "travel-time", ...
inline std::optional<Topic> topic_from_string(std::string_view s) {
    auto k = text::label_key(s);
    for (auto t : kTopics)
        if (k == to_string(t)) return t;
    return std::nullopt;
}

/// Problem topic as carried by extracted records: a category or "none".
using TopicField = std::optional<Topic>;

inline std::string topic_field_string(const TopicField& t) {
    return t ? std::string(to_string(*t)) : std::string("none");
}

}  // namespace tpulse
