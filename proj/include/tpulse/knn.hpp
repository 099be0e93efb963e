#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tpulse/error.hpp"
#include "tpulse/json_io.hpp"
#include "tpulse/tfidf.hpp"

namespace tpulse {

/// Exhaustive cosine-similarity k-nearest-neighbour classifier.
class KnnIndex {
public:
    KnnIndex(std::vector<SparseVector> vectors, std::vector<std::size_t> labels, std::vector<std::string> label_set,
             std::size_t k)
        : vectors_(std::move(vectors)), labels_(std::move(labels)), label_set_(std::move(label_set)), k_(k) {
        if (k_ < 1) throw UsageError("knn: k must be >= 1");
        if (vectors_.size() != labels_.size()) throw DataError("knn: vectors and labels differ in length");
        if (vectors_.size() < k_) throw DataError("knn: fewer stored vectors than k");
        for (auto l : labels_)
            if (l >= label_set_.size()) throw DataError("knn: label index outside label set");
        norms_.reserve(vectors_.size());
        for (const auto& v : vectors_) norms_.push_back(std::sqrt(v.squared_norm()));
    }

    std::size_t k() const noexcept { return k_; }
    std::size_t size() const noexcept { return vectors_.size(); }
    const std::vector<SparseVector>& vectors() const noexcept { return vectors_; }
    const std::vector<std::size_t>& labels() const noexcept { return labels_; }
    const std::vector<std::string>& label_set() const noexcept { return label_set_; }

    /// Cosine similarity to stored vector i; 0 when either side is the zero vector.
    double similarity(const SparseVector& q, double q_norm, std::size_t i) const noexcept {
        if (q_norm == 0.0 || norms_[i] == 0.0) return 0.0;
        return dot(q, vectors_[i]) / (q_norm * norms_[i]);
    }

    /// Positions of the k most similar stored vectors; similarity ties go to the lower position.
    std::vector<std::size_t> neighbours(const SparseVector& q) const {
        const double qn = std::sqrt(q.squared_norm());
        std::vector<double> sims(vectors_.size());
        for (std::size_t i = 0; i < vectors_.size(); ++i) sims[i] = similarity(q, qn, i);
        std::vector<std::size_t> order(vectors_.size());
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_), order.end(),
                          [&](std::size_t a, std::size_t b) { return sims[a] != sims[b] ? sims[a] > sims[b] : a < b; });
        order.resize(k_);
        return order;
    }

    /// Majority label among the neighbours; vote ties go to the lowest label index.
    std::size_t predict(const SparseVector& q) const {
        std::vector<std::size_t> votes(label_set_.size(), 0);
        for (auto i : neighbours(q)) ++votes[labels_[i]];
        std::size_t best = 0;
        for (std::size_t l = 1; l < votes.size(); ++l)
            if (votes[l] > votes[best]) best = l;
        return best;
    }

private:
    std::vector<SparseVector> vectors_;
    std::vector<std::size_t> labels_;
    std::vector<std::string> label_set_;
    std::size_t k_;
    std::vector<double> norms_;
};

inline std::size_t knn_predict(const KnnIndex& index, const SparseVector& q) { return index.predict(q); }

inline Json to_json(const KnnIndex& index) {
    Json vecs = Json::array();
    for (const auto& v : index.vectors()) vecs.push_back(to_json(v));
    return {{"k", index.k()}, {"label_set", index.label_set()}, {"labels", index.labels()}, {"vectors", std::move(vecs)}};
}

inline KnnIndex knn_from_json(const Json& j) {
    std::vector<SparseVector> vecs;
    for (const auto& v : j.at("vectors")) vecs.push_back(sparse_from_json(v));
    return KnnIndex(std::move(vecs), j.at("labels").get<std::vector<std::size_t>>(),
                    j.at("label_set").get<std::vector<std::string>>(), j.at("k").get<std::size_t>());
}

}  // namespace tpulse
