#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tpulse/corpus.hpp"
#include "tpulse/error.hpp"
#include "tpulse/gateway.hpp"
#include "tpulse/text.hpp"

namespace tpulse {

struct FewShotExample {
    std::string tweet;
    std::string answer;
};

/// Chat prompt with named placeholders. task_text must contain {{tweet}}
/// exactly once and may contain {{context}} (which must come first).
struct PromptTemplate {
    static constexpr std::string_view kTweetSlot = "{{tweet}}";
    static constexpr std::string_view kContextSlot = "{{context}}";

    std::string system_text;
    std::string task_text;
    std::vector<FewShotExample> few_shot;

    void validate() const {
        if (system_text.empty()) throw UsageError("prompt template: empty system section");
        auto n = text::count_occurrences(task_text, kTweetSlot);
        if (n == 0) throw UsageError("prompt template: task text has no {{tweet}} slot");
        if (n > 1) throw UsageError("prompt template: task text has more than one {{tweet}} slot");
        auto c = text::count_occurrences(task_text, kContextSlot);
        if (c > 1) throw UsageError("prompt template: task text has more than one {{context}} slot");
        if (c == 1 && task_text.find(kContextSlot) > task_text.find(kTweetSlot))
            throw UsageError("prompt template: {{context}} must precede {{tweet}}");
    }
};

/// Breaks any placeholder literal inside inserted text so it can't be re-expanded.
inline std::string escape_placeholders(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '{' && !out.empty() && out.back() == '{') out += ' ';
        out += c;
    }
    return out;
}

namespace detail {

inline std::string fill_task(const PromptTemplate& tpl, std::string_view tweet, std::string_view context) {
    std::string ctx_block;
    if (!context.empty()) ctx_block = "Reference information:\n" + escape_placeholders(context) + "\n";
    const auto safe_tweet = escape_placeholders(tweet);
    std::string out;
    const auto& t = tpl.task_text;
    const auto tweet_pos = t.find(PromptTemplate::kTweetSlot);
    const auto ctx_pos = t.find(PromptTemplate::kContextSlot);
    if (ctx_pos != std::string::npos) {
        out.append(t, 0, ctx_pos);
        out += ctx_block;
        out.append(t, ctx_pos + PromptTemplate::kContextSlot.size(),
                   tweet_pos - ctx_pos - PromptTemplate::kContextSlot.size());
    } else {
        // No explicit slot: the block goes immediately before the tweet.
        out.append(t, 0, tweet_pos);
        out += ctx_block;
    }
    out += safe_tweet;
    out.append(t, tweet_pos + PromptTemplate::kTweetSlot.size());
    return out;
}

}  // namespace detail

/// system, then one user/assistant pair per few-shot example, then the target
/// user message.
inline std::vector<ChatMessage> render_prompt(const PromptTemplate& tpl, const TweetRecord& tweet,
                                              const std::optional<std::string>& context = std::nullopt) {
    tpl.validate();
    std::vector<ChatMessage> msgs;
    msgs.push_back({Role::system, tpl.system_text});
    for (const auto& ex : tpl.few_shot) {
        msgs.push_back({Role::user, detail::fill_task(tpl, ex.tweet, {})});
        msgs.push_back({Role::assistant, ex.answer});
    }
    msgs.push_back({Role::user, detail::fill_task(tpl, tweet.text, context.value_or(""))});
    return msgs;
}

/// Template file format: sections introduced by "### system", "### user",
/// "### example tweet" and "### example answer" (the last two repeat in pairs).
/// Lines starting with "#!" are comments.
inline PromptTemplate parse_template(std::string_view doc) {
    PromptTemplate tpl;
    enum class Sec { none, system, user, ex_tweet, ex_answer } sec = Sec::none;
    std::string buf;
    std::optional<std::string> pending_tweet;
    auto flush = [&] {
        auto body = text::trim(buf);
        switch (sec) {
            case Sec::none:
                if (!body.empty()) throw DataError("prompt template: text before the first section header");
                break;
            case Sec::system: tpl.system_text = body; break;
            case Sec::user: tpl.task_text = body; break;
            case Sec::ex_tweet:
                if (pending_tweet) throw DataError("prompt template: example tweet without answer");
                pending_tweet = body;
                break;
            case Sec::ex_answer:
                if (!pending_tweet) throw DataError("prompt template: example answer without tweet");
                tpl.few_shot.push_back({*pending_tweet, body});
                pending_tweet.reset();
                break;
        }
        buf.clear();
    };
    for (const auto& line : text::split_lines(doc)) {
        if (line.starts_with("#!")) continue;
        if (line.starts_with("### ")) {
            flush();
            auto name = text::to_lower(text::trim(std::string_view(line).substr(4)));
            if (name == "system") sec = Sec::system;
            else if (name == "user") sec = Sec::user;
            else if (name == "example tweet") sec = Sec::ex_tweet;
            else if (name == "example answer") sec = Sec::ex_answer;
            else throw DataError("prompt template: unknown section '" + name + "'");
            continue;
        }
        buf += line;
        buf += '\n';
    }
    flush();
    if (pending_tweet) throw DataError("prompt template: example tweet without answer");
    try {
        tpl.validate();
    } catch (const UsageError& e) {
        throw DataError(e.what());
    }
    return tpl;
}

inline PromptTemplate load_template(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open prompt template '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_template(ss.str());
}

/// Built-in extraction prompt; share/prompts/extraction.txt carries the same text.
inline PromptTemplate default_extraction_template() {
    PromptTemplate t;
    t.system_text =
        "You are an analyst for a public transit agency. You read short social-media posts about the transit "
        "system and record structured feedback for the operations team.";
    t.task_text =
        "Read the post and answer with one JSON object containing exactly these keys:\n"
        "  \"station\": the station or stop the post is about, or \"none\" (the agency itself is not a station)\n"
        "  \"sentiment\": one of negative, neutral, positive\n"
        "  \"sarcasm\": true or false\n"
        "  \"problem_topic\": one of winter_maintenance, temporal_availability, interaction_with_staff, "
        "maintenance, capacity_availability, communication, accessibility, ride_quality, travel_time, "
        "safety_and_security, or none\n"
        "  \"problem_summary\": a short phrase describing the problem, or \"\" if there is none\n"
        "Do not add commentary.\n\n"
        "{{context}}Post: {{tweet}}";
    t.few_shot.push_back(
        {"Oh great, another 40 minute wait at Finch. Love starting my day like this",
         R"({"station": "Finch", "sentiment": "negative", "sarcasm": true, "problem_topic": "travel_time", "problem_summary": "40 minute wait"})"});
    return t;
}

}  // namespace tpulse
