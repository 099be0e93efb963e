#pragma once

#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tpulse/corpus.hpp"
#include "tpulse/error.hpp"
#include "tpulse/json_io.hpp"

namespace tpulse {

struct EvalReport {
    std::vector<std::string> label_set;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
    std::vector<double> precision;
    std::vector<double> recall;
    std::size_t total = 0;
    double accuracy = 0;
};

/// Score a label predictor on a test set. Predictions outside the label set
/// are an error.
inline EvalReport evaluate(const std::function<std::string(const std::string&)>& predict_fn,
                           const std::vector<LabeledExample>& testset, const std::vector<std::string>& label_set) {
    if (testset.empty()) throw DataError("evaluate: empty test set");
    const auto C = label_set.size();
    auto index_of = [&](const std::string& l) {
        for (std::size_t i = 0; i < C; ++i)
            if (label_set[i] == l) return i;
        throw DataError("evaluate: label '" + l + "' not in label set");
    };
    EvalReport r;
    r.label_set = label_set;
    r.confusion.assign(C, std::vector<std::size_t>(C, 0));
    for (const auto& ex : testset) ++r.confusion[index_of(ex.label)][index_of(predict_fn(ex.text))];
    r.total = testset.size();
    std::size_t trace = 0;
    r.precision.assign(C, 0.0);
    r.recall.assign(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        trace += r.confusion[c][c];
        std::size_t row = 0, col = 0;
        for (std::size_t k = 0; k < C; ++k) {
            row += r.confusion[c][k];
            col += r.confusion[k][c];
        }
        r.precision[c] = col ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(col) : 0.0;
        r.recall[c] = row ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(row) : 0.0;
    }
    r.accuracy = static_cast<double>(trace) / static_cast<double>(r.total);
    return r;
}

inline Json to_json(const EvalReport& r) {
    Json per_class = Json::array();
    for (std::size_t c = 0; c < r.label_set.size(); ++c)
        per_class.push_back({{"label", r.label_set[c]}, {"precision", r.precision[c]}, {"recall", r.recall[c]}});
    return {{"accuracy", r.accuracy},
            {"total", r.total},
            {"label_set", r.label_set},
            {"confusion", r.confusion},
            {"per_class", std::move(per_class)}};
}

/// Aligned plain-text rendering: summary line, per-class metrics, confusion matrix.
inline std::string to_table(const EvalReport& r) {
    std::size_t w = 9;
    for (const auto& l : r.label_set) w = std::max(w, l.size() + 2);
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof buf, "accuracy %.4f (%zu examples)\n\n", r.accuracy, r.total);
    os << buf;
    auto pad = [&](const std::string& s) { return s + std::string(w > s.size() ? w - s.size() : 1, ' '); };
    os << pad("label") << pad("precision") << pad("recall") << "\n";
    for (std::size_t c = 0; c < r.label_set.size(); ++c) {
        std::snprintf(buf, sizeof buf, "%.4f", r.precision[c]);
        os << pad(r.label_set[c]) << pad(buf);
        std::snprintf(buf, sizeof buf, "%.4f", r.recall[c]);
        os << pad(buf) << "\n";
    }
    os << "\n" << pad("truth\\pred");
    for (const auto& l : r.label_set) os << pad(l);
    os << "\n";
    for (std::size_t t = 0; t < r.label_set.size(); ++t) {
        os << pad(r.label_set[t]);
        for (std::size_t p = 0; p < r.label_set.size(); ++p) os << pad(std::to_string(r.confusion[t][p]));
        os << "\n";
    }
    return os.str();
}

}  // namespace tpulse
