#pragma once

#include <random>
#include <string>
#include <vector>

#include "tpulse/corpus.hpp"

namespace tpulse::oracle {

/// Three classes whose documents draw keywords from pairwise disjoint
/// families, padded with shared filler words. Linearly separable on TF-IDF
/// features by construction.
inline DatasetSplit separable_three_class(std::size_t n_docs = 300, std::uint64_t seed = 3) {
    static const std::vector<std::vector<std::string>> families{
        {"crowded", "packed", "full", "squeezed", "jammed", "crammed", "sardines", "overflow"},
        {"delay", "late", "stuck", "waiting", "slow", "held", "stalled", "behind"},
        {"rude", "yelled", "operator", "collector", "attitude", "ignored", "shouted", "staff"},
    };
    static const std::vector<std::string> filler{"the", "ttc", "today", "again", "on", "at", "this", "morning"};
    std::mt19937_64 rng(seed);
    DatasetSplit split;
    split.label_set = {"capacity", "travel_time", "staff"};
    for (std::size_t i = 0; i < n_docs; ++i) {
        auto c = i % 3;
        std::string text;
        auto add = [&](const std::string& w) { text += (text.empty() ? "" : " ") + w; };
        auto keywords = 2 + rng() % 3;
        for (std::size_t k = 0; k < keywords; ++k) add(families[c][rng() % families[c].size()]);
        auto fill = rng() % 4;
        for (std::size_t k = 0; k < fill; ++k) add(filler[rng() % filler.size()]);
        split.train.push_back({text, split.label_set[c]});
    }
    return split;
}

}  // namespace tpulse::oracle
