#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tpulse/json_io.hpp"
#include "tpulse/text.hpp"

namespace tpulse {

/// Key/value pairs recovered from free-form model output, before any enum gate.
struct RawExtraction {
    std::map<std::string, std::string> recovered;  // canonical lower-case key -> raw value
    std::vector<std::string> diagnostics;

    bool has(const std::string& key) const { return recovered.count(key) != 0; }
};

/// Maps case-folded key spellings onto the five canonical keys; other keys pass through.
inline std::string canonical_key(std::string_view key) {
    auto k = text::label_key(key);
    while (!k.empty() && k.front() == '_') k.erase(k.begin());
    while (!k.empty() && k.back() == '_') k.pop_back();
    static const std::map<std::string, std::string, std::less<>> synonyms{
        {"station", "station_mention"},          {"station_name", "station_mention"},
        {"stationname", "station_mention"},      {"stop", "station_mention"},
        {"stop_name", "station_mention"},        {"location", "station_mention"},
        {"topic", "problem_topic"},              {"problem", "problem_topic"},
        {"problemtopic", "problem_topic"},       {"category", "problem_topic"},
        {"problem_category", "problem_topic"},   {"summary", "problem_summary"},
        {"problemsummary", "problem_summary"},   {"problem_description", "problem_summary"},
        {"description", "problem_summary"},      {"sarcastic", "sarcasm"},
        {"is_sarcastic", "sarcasm"},             {"is_sarcasm", "sarcasm"},
        {"sentiment_label", "sentiment"},        {"polarity", "sentiment"},
    };
    auto it = synonyms.find(k);
    return it == synonyms.end() ? k : it->second;
}

inline bool is_extraction_key(std::string_view k) {
    return k == "station_mention" || k == "sentiment" || k == "sarcasm" || k == "problem_topic" || k == "problem_summary";
}

namespace detail {

/// Content of the first fenced block (``` ... ```), or nullopt when there is none.
inline std::optional<std::string> strip_fence(std::string_view s) {
    auto open = s.find("```");
    if (open == std::string_view::npos) return std::nullopt;
    auto body_start = s.find('\n', open + 3);
    // "```json {...}```" on one line: skip the language tag up to the first brace.
    auto brace = s.find('{', open + 3);
    if (body_start == std::string_view::npos || (brace != std::string_view::npos && brace < body_start))
        body_start = brace == std::string_view::npos ? open + 3 : brace;
    else
        body_start += 1;
    auto close = s.find("```", body_start);
    if (close == std::string_view::npos) return std::string(s.substr(body_start));
    return std::string(s.substr(body_start, close - body_start));
}

/// [begin, end) of the outermost brace block, tracking quotes. `closed` is
/// false when the block runs off the end of the input.
inline std::optional<std::pair<std::size_t, std::size_t>> brace_block(std::string_view s, bool& closed) {
    auto start = s.find('{');
    if (start == std::string_view::npos) return std::nullopt;
    int depth = 0;
    char quote = 0;
    for (std::size_t i = start; i < s.size(); ++i) {
        char c = s[i];
        if (quote) {
            if (c == '\\') ++i;
            else if (c == quote) quote = 0;
            continue;
        }
        if (c == '"') quote = c;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) {
            closed = true;
            return std::make_pair(start, i + 1);
        }
    }
    closed = false;
    return std::make_pair(start, s.size());
}

inline std::string json_scalar_string(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return "null";
    return v.dump();
}

/// Hand-rolled scanner for almost-JSON objects.
class LooseObjectScanner {
public:
    explicit LooseObjectScanner(std::string_view s) : s_(s) {}

    /// Appends pairs in source order; returns false if scanning stopped early.
    bool scan(std::vector<std::pair<std::string, std::string>>& out, std::string& problem) {
        skip_ws();
        if (peek() == '{') ++pos_;
        for (;;) {
            skip_ws_and_commas();
            if (at_end() || peek() == '}') return true;
            auto key = read_key();
            if (!key) {
                problem = "unreadable key at offset " + std::to_string(pos_);
                return false;
            }
            skip_ws();
            if (peek() != ':' && peek() != '=') {
                problem = "missing ':' after key '" + *key + "'";
                return false;
            }
            ++pos_;
            skip_ws();
            out.emplace_back(std::move(*key), read_value());
        }
    }

private:
    bool at_end() const { return pos_ >= s_.size(); }
    char peek() const { return at_end() ? '\0' : s_[pos_]; }
    void skip_ws() {
        while (!at_end() && text::is_space(s_[pos_])) ++pos_;
    }
    void skip_ws_and_commas() {
        while (!at_end() && (text::is_space(s_[pos_]) || s_[pos_] == ',' || s_[pos_] == ';')) ++pos_;
    }

    std::optional<std::string> read_key() {
        char c = peek();
        if (c == '"' || c == '\'') return read_quoted(c, true);
        std::string k;
        while (!at_end() && s_[pos_] != ':' && s_[pos_] != '=' && s_[pos_] != '\n' && s_[pos_] != '}' &&
               s_[pos_] != ',') {
            k += s_[pos_++];
        }
        k = text::trim(k);
        if (k.empty()) return std::nullopt;
        return k;
    }

    // A closing quote counts only if what follows looks like the end of a
    // token; this lets apostrophes survive inside single-quoted values.
    bool plausible_close(std::size_t i, bool is_key) const {
        std::size_t j = i + 1;
        while (j < s_.size() && (s_[j] == ' ' || s_[j] == '\t' || s_[j] == '\r')) ++j;
        if (j >= s_.size()) return true;
        char n = s_[j];
        if (is_key) return n == ':' || n == '=';
        return n == ',' || n == '}' || n == '\n' || n == ';' || n == ']';
    }

    std::string read_quoted(char q, bool is_key) {
        ++pos_;
        std::string v;
        while (!at_end()) {
            char c = s_[pos_];
            if (c == '\\' && pos_ + 1 < s_.size()) {
                char e = s_[pos_ + 1];
                switch (e) {
                    case 'n': v += '\n'; break;
                    case 't': v += '\t'; break;
                    case 'r': break;
                    case 'u':
                        // Keep \uXXXX escapes verbatim; the values we care about are ASCII.
                        v += "\\u";
                        break;
                    default: v += e;
                }
                pos_ += 2;
                continue;
            }
            if (c == q && plausible_close(pos_, is_key)) {
                ++pos_;
                return v;
            }
            v += c;
            ++pos_;
        }
        return v;
    }

    std::string read_balanced() {
        const auto start = pos_;
        int depth = 0;
        char quote = 0;
        for (; !at_end(); ++pos_) {
            char c = s_[pos_];
            if (quote) {
                if (c == '\\') ++pos_;
                else if (c == quote) quote = 0;
                continue;
            }
            if (c == '"' || c == '\'') quote = c;
            else if (c == '{' || c == '[') ++depth;
            else if ((c == '}' || c == ']') && --depth == 0) {
                ++pos_;
                break;
            }
        }
        return std::string(s_.substr(start, pos_ - start));
    }

    std::string read_value() {
        char c = peek();
        if (c == '"' || c == '\'') return read_quoted(c, false);
        if (c == '[' || c == '{') return read_balanced();
        std::string v;
        while (!at_end() && s_[pos_] != ',' && s_[pos_] != '}' && s_[pos_] != '\n' && s_[pos_] != ';') v += s_[pos_++];
        return text::trim(v);
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

inline std::string strip_value_quotes(std::string v) {
    v = text::trim(v);
    while (!v.empty() && (v.back() == ',' || v.back() == ';')) v.pop_back();
    v = text::trim(v);
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
    return v;
}

/// "key: value" lines, only for recognised extraction keys.
inline std::vector<std::pair<std::string, std::string>> key_value_lines(std::string_view s) {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto line : text::split_lines(s)) {
        auto l = text::trim(line);
        while (!l.empty() && (l.front() == '-' || l.front() == '*' || l.front() == '>')) l = text::trim(l.substr(1));
        auto sep = l.find_first_of(":=");
        if (sep == std::string::npos || sep == 0) continue;
        auto key = strip_value_quotes(l.substr(0, sep));
        std::erase(key, '*');
        if (!is_extraction_key(canonical_key(key))) continue;
        out.emplace_back(key, strip_value_quotes(l.substr(sep + 1)));
    }
    return out;
}

}  // namespace detail

/// Recover key/value pairs from arbitrary model output. Never throws; when
/// nothing is recovered the diagnostics say why.
inline RawExtraction parse_output(std::string_view text) noexcept {
    RawExtraction r;
    try {
        std::string body(text);
        if (auto fenced = detail::strip_fence(body)) {
            body = std::move(*fenced);
            r.diagnostics.push_back("fence stripped");
        }
        std::vector<std::pair<std::string, std::string>> pairs;
        bool closed = false;
        if (auto block = detail::brace_block(body, closed)) {
            auto [b, e] = *block;
            if (!text::trim_view(std::string_view(body).substr(0, b)).empty() ||
                !text::trim_view(std::string_view(body).substr(e)).empty())
                r.diagnostics.push_back("surrounding prose stripped");
            if (!closed) r.diagnostics.push_back("brace block unterminated");
            auto block_text = std::string_view(body).substr(b, e - b);
            bool strict_ok = false;
            if (closed) {
                auto j = Json::parse(block_text, nullptr, false);
                if (j.is_object()) {
                    for (const auto& [k, v] : j.items()) pairs.emplace_back(k, detail::json_scalar_string(v));
                    strict_ok = true;
                }
            }
            if (!strict_ok) {
                r.diagnostics.push_back("brace block recovered leniently");
                std::string problem;
                if (!detail::LooseObjectScanner(block_text).scan(pairs, problem)) r.diagnostics.push_back(problem);
            }
        } else {
            r.diagnostics.push_back("no brace block");
        }
        if (pairs.empty()) {
            pairs = detail::key_value_lines(body);
            if (!pairs.empty()) r.diagnostics.push_back("recovered from key: value lines");
        }
        for (auto& [k, v] : pairs) {
            auto key = canonical_key(k);
            if (key.empty()) continue;
            if (r.recovered.count(key)) {
                r.diagnostics.push_back("duplicate key '" + key + "' ignored");
                continue;
            }
            r.recovered.emplace(std::move(key), text::trim(v));
        }
        if (r.recovered.empty()) r.diagnostics.push_back("no fields recovered");
    } catch (const std::exception& e) {
        r.diagnostics.push_back(std::string("parser error: ") + e.what());
    } catch (...) {
        r.diagnostics.push_back("parser error");
    }
    if (r.recovered.empty() && r.diagnostics.empty()) r.diagnostics.push_back("no fields recovered");
    return r;
}

}  // namespace tpulse
