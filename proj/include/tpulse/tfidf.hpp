#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tpulse/error.hpp"
#include "tpulse/json_io.hpp"
#include "tpulse/tokenize.hpp"

namespace tpulse {

/// Sorted (index, weight) pairs; indices strictly increasing, weights non-zero.
struct SparseVector {
    std::vector<std::pair<std::uint32_t, double>> entries;

    bool empty() const noexcept { return entries.empty(); }
    std::size_t size() const noexcept { return entries.size(); }

    double weight(std::uint32_t index) const noexcept {
        auto it = std::lower_bound(entries.begin(), entries.end(), index,
                                   [](const auto& e, std::uint32_t i) { return e.first < i; });
        return (it != entries.end() && it->first == index) ? it->second : 0.0;
    }

    double squared_norm() const noexcept {
        double s = 0;
        for (const auto& [_, w] : entries) s += w * w;
        return s;
    }

    friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

inline double dot(const SparseVector& a, const SparseVector& b) noexcept {
    double s = 0;
    auto i = a.entries.begin(), j = b.entries.begin();
    while (i != a.entries.end() && j != b.entries.end()) {
        if (i->first < j->first)
            ++i;
        else if (j->first < i->first)
            ++j;
        else {
            s += i->second * j->second;
            ++i;
            ++j;
        }
    }
    return s;
}

/// Build from unsorted pairs; duplicates are summed and zeros dropped.
inline SparseVector make_sparse(std::vector<std::pair<std::uint32_t, double>> pairs) {
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    SparseVector v;
    for (const auto& [i, w] : pairs) {
        if (!v.entries.empty() && v.entries.back().first == i)
            v.entries.back().second += w;
        else
            v.entries.emplace_back(i, w);
    }
    std::erase_if(v.entries, [](const auto& e) { return e.second == 0.0; });
    return v;
}

struct Vocabulary {
    std::vector<std::string> terms;           // index -> term
    std::vector<std::size_t> doc_freq;        // index -> number of documents containing the term
    std::unordered_map<std::string, std::uint32_t> term_to_index;
    std::size_t document_count = 0;           // N

    std::size_t size() const noexcept { return terms.size(); }

    std::optional<std::uint32_t> index_of(const std::string& term) const {
        auto it = term_to_index.find(term);
        if (it == term_to_index.end()) return std::nullopt;
        return it->second;
    }
};

struct TfidfModel {
    Vocabulary vocabulary;
    std::vector<double> idf;  // ln(N / doc_freq)

    std::size_t dimension() const noexcept { return vocabulary.size(); }
};

struct FitOptions {
    std::size_t min_df = 1;
    std::optional<std::size_t> max_vocab;  // unlimited when empty
};

namespace detail {

inline TfidfModel assemble_model(std::vector<std::pair<std::string, std::size_t>> kept, std::size_t n_docs) {
    // Dense indices follow lexicographic term order.
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    TfidfModel model;
    auto& vocab = model.vocabulary;
    vocab.document_count = n_docs;
    for (auto& [term, df] : kept) {
        vocab.term_to_index.emplace(term, static_cast<std::uint32_t>(vocab.terms.size()));
        vocab.terms.push_back(std::move(term));
        vocab.doc_freq.push_back(df);
        model.idf.push_back(std::log(static_cast<double>(n_docs) / static_cast<double>(df)));
    }
    return model;
}

}  // namespace detail

/// Fit vocabulary and document frequencies.
inline TfidfModel fit(const std::vector<std::string>& texts, FitOptions opts = {}) {
    if (texts.empty()) throw DataError("tfidf fit: empty corpus");
    if (opts.min_df < 1) throw UsageError("tfidf fit: min_df must be >= 1");

    std::unordered_map<std::string, std::size_t> df;
    for (const auto& t : texts) {
        auto toks = tokenize(t);
        std::unordered_set<std::string> uniq(toks.begin(), toks.end());
        for (const auto& term : uniq) ++df[term];
    }

    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [term, count] : df)
        if (count >= opts.min_df) kept.emplace_back(term, count);

    if (opts.max_vocab && kept.size() > *opts.max_vocab) {
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            return a.second != b.second ? a.second > b.second : a.first < b.first;
        });
        kept.resize(*opts.max_vocab);
    }
    return detail::assemble_model(std::move(kept), texts.size());
}

/// tf(t,d) * idf(t). The tf denominator counts every token of the document,
/// including ones outside the vocabulary.
inline SparseVector transform(const TfidfModel& model, std::string_view text) {
    auto toks = tokenize(text);
    if (toks.empty()) return {};
    std::map<std::uint32_t, std::size_t> counts;
    for (const auto& t : toks)
        if (auto idx = model.vocabulary.index_of(t)) ++counts[*idx];
    SparseVector v;
    const double total = static_cast<double>(toks.size());
    for (const auto& [idx, c] : counts) {
        double w = (static_cast<double>(c) / total) * model.idf[idx];
        if (w != 0.0) v.entries.emplace_back(idx, w);
    }
    return v;
}

inline std::vector<SparseVector> transform_all(const TfidfModel& model, const std::vector<std::string>& texts) {
    std::vector<SparseVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(transform(model, t));
    return out;
}

inline Json to_json(const TfidfModel& model) {
    Json terms = Json::array();
    const auto& v = model.vocabulary;
    for (std::size_t i = 0; i < v.size(); ++i)
        terms.push_back({{"term", v.terms[i]}, {"index", i}, {"doc_freq", v.doc_freq[i]}});
    return {{"terms", std::move(terms)}, {"N", v.document_count}};
}

inline TfidfModel tfidf_from_json(const Json& doc) {
    try {
        std::size_t n = doc.at("N").get<std::size_t>();
        const auto& terms = doc.at("terms");
        std::vector<std::pair<std::string, std::size_t>> by_index(terms.size());
        std::vector<bool> filled(terms.size(), false);
        for (const auto& t : terms) {
            auto idx = t.at("index").get<std::size_t>();
            auto df = t.at("doc_freq").get<std::size_t>();
            if (idx >= terms.size() || filled[idx]) throw DataError("tfidf model: bad or repeated index");
            if (df < 1 || df > n) throw DataError("tfidf model: doc_freq out of range for '" + t.at("term").get<std::string>() + "'");
            by_index[idx] = {t.at("term").get<std::string>(), df};
            filled[idx] = true;
        }
        TfidfModel model;
        auto& vocab = model.vocabulary;
        vocab.document_count = n;
        for (auto& [term, df] : by_index) {
            vocab.term_to_index.emplace(term, static_cast<std::uint32_t>(vocab.terms.size()));
            vocab.terms.push_back(std::move(term));
            vocab.doc_freq.push_back(df);
            model.idf.push_back(std::log(static_cast<double>(n) / static_cast<double>(df)));
        }
        return model;
    } catch (const Json::exception& e) {
        throw DataError(std::string("tfidf model: ") + e.what());
    }
}

inline Json to_json(const SparseVector& v) {
    Json arr = Json::array();
    for (const auto& [i, w] : v.entries) arr.push_back(Json::array({i, w}));
    return arr;
}

inline SparseVector sparse_from_json(const Json& arr) {
    std::vector<std::pair<std::uint32_t, double>> pairs;
    for (const auto& e : arr) pairs.emplace_back(e.at(0).get<std::uint32_t>(), e.at(1).get<double>());
    return make_sparse(std::move(pairs));
}

}  // namespace tpulse
