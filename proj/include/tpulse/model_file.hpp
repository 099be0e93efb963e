#pragma once

#include <string>
#include <variant>

#include "tpulse/corpus.hpp"
#include "tpulse/evaluation.hpp"
#include "tpulse/ffnn_model.hpp"
#include "tpulse/json_io.hpp"
#include "tpulse/knn.hpp"
#include "tpulse/linear_model.hpp"
#include "tpulse/tfidf.hpp"

namespace tpulse {

/// Dataset schema used for a classification task name.
inline std::string task_schema(std::string_view task) {
    if (task == "sentiment") return "sentiment5";
    if (task == "sarcasm") return "sarcasm4";
    if (task == "topic") return "topic10";
    throw UsageError("unknown task '" + std::string(task) + "' (expected sentiment, sarcasm or topic)");
}

struct ModelOptions {
    TrainConfig train;
    FitOptions fit;
    std::size_t hidden = 16;  // ffnn
    std::size_t knn_k = 5;
};

/// A trained classifier together with the vectorizer it was trained on.
struct ModelFile {
    std::string kind;  // lr | knn | ffnn
    std::string task;
    TfidfModel tfidf;
    std::variant<LinearModel, KnnIndex, FfnnModel> model;

    const std::vector<std::string>& label_set() const {
        if (auto* lr = std::get_if<LinearModel>(&model)) return lr->label_set;
        if (auto* ff = std::get_if<FfnnModel>(&model)) return ff->label_set;
        return std::get<KnnIndex>(model).label_set();
    }

    std::string predict(const std::string& text) const {
        auto x = transform(tfidf, text);
        if (auto* lr = std::get_if<LinearModel>(&model)) return lr->label_set[tpulse::predict(*lr, x).label];
        if (auto* ff = std::get_if<FfnnModel>(&model)) return ff->label_set[tpulse::predict(*ff, x).label];
        const auto& kn = std::get<KnnIndex>(model);
        return kn.label_set()[kn.predict(x)];
    }
};

inline ModelFile train_model(const DatasetSplit& split, std::string_view kind, std::string_view task,
                             const ModelOptions& opt) {
    if (split.train.empty()) throw DataError("training set is empty");
    opt.train.validate();
    std::vector<std::string> texts;
    texts.reserve(split.train.size());
    for (const auto& r : split.train) texts.push_back(r.text);
    ModelFile out{std::string(kind), std::string(task), fit(texts, opt.fit), LinearModel{}};
    if (kind == "lr") {
        out.model = train_linear(split, out.tfidf, opt.train);
    } else if (kind == "ffnn") {
        if (opt.hidden < 1) throw UsageError("hidden must be >= 1");
        out.model = train_ffnn(split, out.tfidf, opt.train, opt.hidden);
    } else if (kind == "knn") {
        auto xs = transform_all(out.tfidf, texts);
        out.model = KnnIndex(std::move(xs), detail::encode_labels(split.train, split), split.label_set, opt.knn_k);
    } else {
        throw UsageError("unknown model '" + std::string(kind) + "' (expected lr, knn or ffnn)");
    }
    return out;
}

inline Json to_json(const ModelFile& m) {
    Json model = std::visit([](const auto& x) { return to_json(x); }, m.model);
    return {{"kind", m.kind}, {"task", m.task}, {"tfidf", to_json(m.tfidf)}, {"model", std::move(model)}};
}

inline ModelFile model_file_from_json(const Json& j) {
    try {
        ModelFile m{j.at("kind").get<std::string>(), j.at("task").get<std::string>(), tfidf_from_json(j.at("tfidf")),
                    LinearModel{}};
        if (m.kind == "lr") m.model = linear_from_json(j.at("model"));
        else if (m.kind == "ffnn") m.model = ffnn_from_json(j.at("model"));
        else if (m.kind == "knn") m.model = knn_from_json(j.at("model"));
        else throw DataError("model file: unknown kind '" + m.kind + "'");
        return m;
    } catch (const Json::exception& e) {
        throw DataError(std::string("model file: ") + e.what());
    }
}

inline ModelFile load_model_file(const std::string& path) { return model_file_from_json(read_json_file(path)); }

inline EvalReport evaluate_model(const ModelFile& m, const std::vector<LabeledExample>& testset) {
    return evaluate([&](const std::string& t) { return m.predict(t); }, testset, m.label_set());
}

}  // namespace tpulse
