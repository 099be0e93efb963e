#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tpulse/linear_model.hpp"

namespace tpulse {

/// One hidden ReLU layer followed by a softmax output layer.
struct FfnnModel {
    Matrix w1;                 // H x V
    std::vector<double> b1;    // H
    Matrix w2;                 // C x H
    std::vector<double> b2;    // C
    std::vector<std::string> label_set;

    std::size_t hidden() const noexcept { return w1.rows; }
    std::size_t dimension() const noexcept { return w1.cols; }
    std::size_t classes() const noexcept { return w2.rows; }
};

/// Uniform Glorot-style initialisation from the seed; hidden biases start
/// slightly positive so units are active on sparse inputs.
inline FfnnModel init_ffnn(std::size_t dim, std::size_t hidden, std::vector<std::string> label_set, std::uint64_t seed) {
    if (hidden < 1) throw UsageError("ffnn: hidden size must be >= 1");
    FfnnModel m;
    const auto classes = label_set.size();
    m.label_set = std::move(label_set);
    m.w1 = Matrix(hidden, dim);
    m.b1.assign(hidden, 0.1);
    m.w2 = Matrix(classes, hidden);
    m.b2.assign(classes, 0.0);
    Rng rng(seed);
    const double a1 = std::sqrt(6.0 / static_cast<double>(dim + hidden));
    const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + classes));
    for (auto& w : m.w1.data) w = rng.uniform(-a1, a1);
    for (auto& w : m.w2.data) w = rng.uniform(-a2, a2);
    return m;
}

struct FfnnActivations {
    std::vector<double> pre;     // W1 x + b1
    std::vector<double> hidden;  // relu(pre)
    std::vector<double> logits;  // W2 h + b2
};

inline FfnnActivations forward(const FfnnModel& m, const SparseVector& x) {
    detail::check_dimension(x, m.dimension());
    FfnnActivations a;
    a.pre = m.b1;
    for (std::size_t h = 0; h < m.hidden(); ++h) {
        auto row = m.w1.row(h);
        for (const auto& [j, v] : x.entries) a.pre[h] += row[j] * v;
    }
    a.hidden.resize(a.pre.size());
    for (std::size_t h = 0; h < a.pre.size(); ++h) a.hidden[h] = a.pre[h] > 0 ? a.pre[h] : 0.0;
    a.logits = m.b2;
    for (std::size_t c = 0; c < m.classes(); ++c) {
        auto row = m.w2.row(c);
        for (std::size_t h = 0; h < m.hidden(); ++h) a.logits[c] += row[h] * a.hidden[h];
    }
    return a;
}

inline Prediction predict(const FfnnModel& m, const SparseVector& x) {
    auto z = forward(m, x).logits;
    softmax(z);
    return {argmax(z), std::move(z)};
}

struct FfnnGradient {
    double loss = 0;
    Matrix w1;
    std::vector<double> b1;
    Matrix w2;
    std::vector<double> b2;
};

/// Mean cross-entropy plus (l2/2)(||W1||^2 + ||W2||^2), with backpropagated gradient.
inline FfnnGradient loss_and_gradient(const FfnnModel& m, std::span<const SparseVector> xs,
                                      std::span<const std::size_t> ys, double l2) {
    FfnnGradient g{0.0, Matrix(m.hidden(), m.dimension()), std::vector<double>(m.hidden(), 0.0),
                   Matrix(m.classes(), m.hidden()), std::vector<double>(m.classes(), 0.0)};
    const double inv_n = xs.empty() ? 0.0 : 1.0 / static_cast<double>(xs.size());
    std::vector<double> dh(m.hidden());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        auto a = forward(m, xs[i]);
        auto& p = a.logits;
        softmax(p);
        g.loss -= std::log(std::max(p[ys[i]], 1e-300)) * inv_n;
        p[ys[i]] -= 1.0;
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t c = 0; c < m.classes(); ++c) {
            double d = p[c] * inv_n;
            g.b2[c] += d;
            auto grow = g.w2.row(c);
            auto wrow = m.w2.row(c);
            for (std::size_t h = 0; h < m.hidden(); ++h) {
                grow[h] += d * a.hidden[h];
                dh[h] += d * wrow[h];
            }
        }
        for (std::size_t h = 0; h < m.hidden(); ++h) {
            if (a.pre[h] <= 0) continue;
            g.b1[h] += dh[h];
            auto row = g.w1.row(h);
            for (const auto& [j, v] : xs[i].entries) row[j] += dh[h] * v;
        }
    }
    if (l2 > 0) {
        double sq = 0;
        for (std::size_t k = 0; k < m.w1.data.size(); ++k) {
            sq += m.w1.data[k] * m.w1.data[k];
            g.w1.data[k] += l2 * m.w1.data[k];
        }
        for (std::size_t k = 0; k < m.w2.data.size(); ++k) {
            sq += m.w2.data[k] * m.w2.data[k];
            g.w2.data[k] += l2 * m.w2.data[k];
        }
        g.loss += 0.5 * l2 * sq;
    }
    return g;
}

inline FfnnModel train_ffnn(std::span<const SparseVector> xs, std::span<const std::size_t> ys, std::size_t dim,
                            std::vector<std::string> label_set, const TrainConfig& cfg, std::size_t hidden) {
    cfg.validate();
    if (xs.empty()) throw DataError("train_ffnn: empty training set");
    auto m = init_ffnn(dim, hidden, std::move(label_set), cfg.seed);
    std::vector<SparseVector> bx;
    std::vector<std::size_t> by;
    const double lr = cfg.learning_rate;
    detail::for_each_batch(xs.size(), cfg, [&](std::span<const std::size_t> idx, std::size_t epoch) {
        bx.clear();
        by.clear();
        for (auto i : idx) {
            bx.push_back(xs[i]);
            by.push_back(ys[i]);
        }
        auto g = loss_and_gradient(m, bx, by, cfg.l2);
        if (!std::isfinite(g.loss))
            throw DataError("train_ffnn: non-finite loss in epoch " + std::to_string(epoch) +
                            " (learning rate too large?)");
        for (std::size_t k = 0; k < m.w1.data.size(); ++k) m.w1.data[k] -= lr * g.w1.data[k];
        for (std::size_t k = 0; k < m.b1.size(); ++k) m.b1[k] -= lr * g.b1[k];
        for (std::size_t k = 0; k < m.w2.data.size(); ++k) m.w2.data[k] -= lr * g.w2.data[k];
        for (std::size_t k = 0; k < m.b2.size(); ++k) m.b2[k] -= lr * g.b2[k];
    });
    return m;
}

inline FfnnModel train_ffnn(const DatasetSplit& split, const TfidfModel& tfidf, const TrainConfig& cfg,
                            std::size_t hidden) {
    if (split.train.empty()) throw DataError("train_ffnn: empty training set");
    std::vector<SparseVector> xs;
    xs.reserve(split.train.size());
    for (const auto& r : split.train) xs.push_back(transform(tfidf, r.text));
    auto ys = detail::encode_labels(split.train, split);
    return train_ffnn(xs, ys, tfidf.dimension(), split.label_set, cfg, hidden);
}

inline Json to_json(const FfnnModel& m) {
    return {{"label_set", m.label_set}, {"hidden", m.hidden()}, {"w1", to_json(m.w1)}, {"b1", m.b1},
            {"w2", to_json(m.w2)},      {"b2", m.b2}};
}

inline FfnnModel ffnn_from_json(const Json& j) {
    FfnnModel m;
    m.label_set = j.at("label_set").get<std::vector<std::string>>();
    m.w1 = matrix_from_json(j.at("w1"));
    m.b1 = j.at("b1").get<std::vector<double>>();
    m.w2 = matrix_from_json(j.at("w2"));
    m.b2 = j.at("b2").get<std::vector<double>>();
    if (m.b1.size() != m.w1.rows || m.w2.cols != m.w1.rows || m.w2.rows != m.label_set.size() ||
        m.b2.size() != m.label_set.size())
        throw DataError("ffnn model: inconsistent shapes");
    return m;
}

}  // namespace tpulse
