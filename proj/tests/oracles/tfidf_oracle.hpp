#pragma once

// Direct transcription of the three TF-IDF formulas over pre-tokenized
// documents. Shares no code with tpulse::fit/transform.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace tpulse::oracle {

using Doc = std::vector<std::string>;

inline double tf(const std::string& t, const Doc& d) {
    double n = 0;
    for (const auto& w : d) n += (w == t);
    return n / static_cast<double>(d.size());
}

inline double idf(const std::string& t, const std::vector<Doc>& corpus) {
    double containing = 0;
    for (const auto& d : corpus) {
        bool has = false;
        for (const auto& w : d) has = has || (w == t);
        containing += has;
    }
    return std::log(static_cast<double>(corpus.size()) / containing);
}

/// term -> tf-idf weight for every corpus term present in `d` (zeros included).
inline std::map<std::string, double> tfidf(const Doc& d, const std::vector<Doc>& corpus) {
    std::map<std::string, double> out;
    for (const auto& doc : corpus)
        for (const auto& w : doc) out[w] = 0.0;
    for (auto& [t, v] : out) v = d.empty() ? 0.0 : tf(t, d) * idf(t, corpus);
    return out;
}

inline std::string join(const Doc& d) {
    std::string s;
    for (const auto& w : d) {
        if (!s.empty()) s += ' ';
        s += w;
    }
    return s;
}

/// Random corpus over an alphabet of lower-case words (already tokenizer-stable).
inline std::vector<Doc> random_corpus(std::mt19937_64& rng, std::size_t max_docs = 50, std::size_t alphabet = 20) {
    static const std::vector<std::string> words{
        "bus",   "late",  "train", "delay", "union", "bloor", "crowd", "rude",  "clean", "slow",
        "snow",  "shutl", "line",  "wait",  "door",  "seat",  "stop",  "sign",  "alert", "track",
        "fare",  "card",  "gate",  "ramp",  "lift"};
    std::vector<Doc> corpus(1 + rng() % max_docs);
    for (auto& d : corpus) {
        auto len = rng() % 12;  // empty documents allowed
        for (std::size_t i = 0; i < len; ++i) d.push_back(words[rng() % std::min(alphabet, words.size())]);
    }
    return corpus;
}

}  // namespace tpulse::oracle
