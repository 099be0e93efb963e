#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "tpulse/text.hpp"

namespace tpulse {

/// Collapse every run of three or more identical bytes to a single byte.
/// "Baaaaaathurst" -> "bathurst"; doubled letters ("cool") are kept.
inline std::string collapse_runs(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t j = i;
        while (j < s.size() && s[j] == s[i]) ++j;
        auto run = j - i;
        // Never split a multi-byte sequence: only ASCII runs collapse.
        if (run >= 3 && static_cast<unsigned char>(s[i]) < 0x80)
            out.push_back(s[i]);
        else
            out.append(s.substr(i, run));
        i = j;
    }
    return out;
}

/// Blank out URLs and @-mentions.
inline std::string strip_urls_and_mentions(std::string_view s) {
    std::string out(s);
    auto blank_until_space = [&](std::size_t from) {
        std::size_t k = from;
        while (k < out.size() && !text::is_space(out[k])) out[k++] = ' ';
        return k;
    };
    std::size_t i = 0;
    while (i < out.size()) {
        bool boundary = i == 0 || !text::is_word_byte(out[i - 1]);
        auto rest = std::string_view(out).substr(i);
        auto lowered = text::to_lower(rest.substr(0, 8));
        if (boundary && (lowered.starts_with("http://") || lowered.starts_with("https://") || lowered.starts_with("www."))) {
            i = blank_until_space(i);
            continue;
        }
        if (out[i] == '@' && boundary) {
            std::size_t k = i + 1;
            while (k < out.size() && (text::is_word_byte(out[k]) || out[k] == '_')) ++k;
            for (std::size_t m = i; m < k; ++m) out[m] = ' ';
            i = k;
            continue;
        }
        ++i;
    }
    return out;
}

/// Case-folded word tokens with URLs and @-mentions removed, split on
/// non-alphanumeric runs, and elongations collapsed.
inline std::vector<std::string> tokenize(std::string_view raw) {
    auto cleaned = strip_urls_and_mentions(raw);
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            auto t = collapse_runs(current);
            if (!t.empty()) tokens.push_back(std::move(t));
            current.clear();
        }
    };
    for (char c : cleaned) {
        if (text::is_word_byte(c))
            current.push_back(text::ascii_lower(c));
        else
            flush();
    }
    flush();
    return tokens;
}

}  // namespace tpulse
