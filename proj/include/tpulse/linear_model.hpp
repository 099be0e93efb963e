#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tpulse/corpus.hpp"
#include "tpulse/dense.hpp"
#include "tpulse/error.hpp"
#include "tpulse/tfidf.hpp"

namespace tpulse {

struct TrainConfig {
    double learning_rate = 0.5;
    std::size_t epochs = 20;
    double l2 = 1e-4;
    std::size_t batch_size = 32;
    std::uint64_t seed = 42;

    void validate() const {
        if (!(learning_rate > 0)) throw UsageError("learning_rate must be > 0");
        if (l2 < 0) throw UsageError("l2 must be >= 0");
        if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    }
};

struct Prediction {
    std::size_t label = 0;
    std::vector<double> probabilities;
};

/// Multinomial logistic regression over sparse inputs.
struct LinearModel {
    Matrix weights;               // C x V
    std::vector<double> bias;     // C
    std::vector<std::string> label_set;

    LinearModel() = default;
    LinearModel(std::size_t classes, std::size_t dim, std::vector<std::string> labels)
        : weights(classes, dim), bias(classes, 0.0), label_set(std::move(labels)) {}

    std::size_t classes() const noexcept { return weights.rows; }
    std::size_t dimension() const noexcept { return weights.cols; }
};

namespace detail {

inline void check_dimension(const SparseVector& x, std::size_t dim) {
    if (!x.entries.empty() && x.entries.back().first >= dim)
        throw DataError("input index " + std::to_string(x.entries.back().first) + " exceeds model dimension " +
                        std::to_string(dim));
}

}  // namespace detail

inline std::vector<double> logits(const LinearModel& m, const SparseVector& x) {
    detail::check_dimension(x, m.dimension());
    std::vector<double> z(m.bias);
    for (std::size_t c = 0; c < m.classes(); ++c) {
        auto row = m.weights.row(c);
        for (const auto& [j, v] : x.entries) z[c] += row[j] * v;
    }
    return z;
}

inline Prediction predict(const LinearModel& m, const SparseVector& x) {
    auto z = logits(m, x);
    softmax(z);
    return {argmax(z), std::move(z)};
}

struct LinearGradient {
    double loss = 0;
    Matrix weights;
    std::vector<double> bias;
};

/// Mean softmax cross-entropy over the batch plus (l2/2)*||W||^2, and its gradient.
inline LinearGradient loss_and_gradient(const LinearModel& m, std::span<const SparseVector> xs,
                                        std::span<const std::size_t> ys, double l2) {
    LinearGradient g{0.0, Matrix(m.classes(), m.dimension()), std::vector<double>(m.classes(), 0.0)};
    const double inv_n = xs.empty() ? 0.0 : 1.0 / static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        auto p = logits(m, xs[i]);
        softmax(p);
        g.loss -= std::log(std::max(p[ys[i]], 1e-300)) * inv_n;
        p[ys[i]] -= 1.0;
        for (std::size_t c = 0; c < m.classes(); ++c) {
            double d = p[c] * inv_n;
            g.bias[c] += d;
            auto row = g.weights.row(c);
            for (const auto& [j, v] : xs[i].entries) row[j] += d * v;
        }
    }
    if (l2 > 0) {
        double sq = 0;
        for (std::size_t k = 0; k < m.weights.data.size(); ++k) {
            sq += m.weights.data[k] * m.weights.data[k];
            g.weights.data[k] += l2 * m.weights.data[k];
        }
        g.loss += 0.5 * l2 * sq;
    }
    return g;
}

namespace detail {

inline std::vector<std::size_t> encode_labels(const std::vector<LabeledExample>& rows, const DatasetSplit& split) {
    std::vector<std::size_t> ys;
    ys.reserve(rows.size());
    for (const auto& r : rows) ys.push_back(split.label_index(r.label));
    return ys;
}

/// Calls step(batch_indices) for every mini-batch of every epoch in a
/// seed-determined order.
template <class Step>
void for_each_batch(std::size_t n, const TrainConfig& cfg, Step&& step) {
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            auto end = std::min(n, start + cfg.batch_size);
            step(std::span<const std::size_t>(order.data() + start, end - start), epoch);
        }
    }
}

}  // namespace detail

/// Mini-batch gradient descent on pre-vectorized inputs.
inline LinearModel train_linear(std::span<const SparseVector> xs, std::span<const std::size_t> ys,
                                std::size_t dim, std::vector<std::string> label_set, const TrainConfig& cfg) {
    cfg.validate();
    if (xs.empty()) throw DataError("train_linear: empty training set");
    const auto classes = label_set.size();
    LinearModel m(classes, dim, std::move(label_set));
    std::vector<SparseVector> bx;
    std::vector<std::size_t> by;
    detail::for_each_batch(xs.size(), cfg, [&](std::span<const std::size_t> idx, std::size_t epoch) {
        bx.clear();
        by.clear();
        for (auto i : idx) {
            bx.push_back(xs[i]);
            by.push_back(ys[i]);
        }
        auto g = loss_and_gradient(m, bx, by, cfg.l2);
        if (!std::isfinite(g.loss))
            throw DataError("train_linear: non-finite loss in epoch " + std::to_string(epoch) +
                            " (learning rate too large?)");
        for (std::size_t k = 0; k < m.weights.data.size(); ++k) m.weights.data[k] -= cfg.learning_rate * g.weights.data[k];
        for (std::size_t c = 0; c < m.classes(); ++c) m.bias[c] -= cfg.learning_rate * g.bias[c];
    });
    return m;
}

inline LinearModel train_linear(const DatasetSplit& split, const TfidfModel& tfidf, const TrainConfig& cfg) {
    if (split.train.empty()) throw DataError("train_linear: empty training set");
    std::vector<SparseVector> xs;
    xs.reserve(split.train.size());
    for (const auto& r : split.train) xs.push_back(transform(tfidf, r.text));
    auto ys = detail::encode_labels(split.train, split);
    return train_linear(xs, ys, tfidf.dimension(), split.label_set, cfg);
}

inline Json to_json(const LinearModel& m) {
    return {{"label_set", m.label_set}, {"weights", to_json(m.weights)}, {"bias", m.bias}};
}

inline LinearModel linear_from_json(const Json& j) {
    LinearModel m;
    m.label_set = j.at("label_set").get<std::vector<std::string>>();
    m.weights = matrix_from_json(j.at("weights"));
    m.bias = j.at("bias").get<std::vector<double>>();
    if (m.weights.rows != m.label_set.size() || m.bias.size() != m.label_set.size())
        throw DataError("linear model: shape does not match label set");
    return m;
}

}  // namespace tpulse
