#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tpulse/error.hpp"
#include "tpulse/gateway.hpp"
#include "tpulse/json_io.hpp"
#include "tpulse/text.hpp"
#include "tpulse/tokenize.hpp"

namespace tpulse {

using EmbeddingVector = std::vector<double>;

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual EmbeddingVector embed(std::string_view text) const = 0;
    virtual std::size_t dim() const = 0;
    virtual Json describe() const = 0;
};

/// Case-fold, collapse elongations, replace punctuation with spaces, squeeze whitespace.
inline std::string embedding_normal_form(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : collapse_runs(text::to_lower(s))) out += text::is_word_byte(c) ? c : ' ';
    return text::collapse_whitespace(out);
}

/// Hashed character trigrams over the space-padded normal form, L2-normalized.
class FallbackEmbedder final : public Embedder {
public:
    static constexpr std::size_t kDefaultDim = 256;

    explicit FallbackEmbedder(std::size_t dim = kDefaultDim) : dim_(dim) {
        if (dim_ == 0) throw UsageError("fallback embedder: dimension must be > 0");
    }

    EmbeddingVector embed(std::string_view raw) const override {
        auto norm = embedding_normal_form(raw);
        if (norm.empty()) throw DataError("embed: text is empty after normalization");
        const std::string padded = " " + norm + " ";
        EmbeddingVector v(dim_, 0.0);
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
            v[text::fnv1a64(std::string_view(padded).substr(i, 3)) % dim_] += 1.0;
        double sq = 0;
        for (double x : v) sq += x * x;
        const double inv = 1.0 / std::sqrt(sq);
        for (double& x : v) x *= inv;
        return v;
    }

    std::size_t dim() const override { return dim_; }
    Json describe() const override { return {{"kind", "fallback"}, {"dim", dim_}}; }

private:
    std::size_t dim_;
};

struct DocumentChunk {
    std::string id;
    std::string text;
    std::map<std::string, std::string> metadata;

    friend bool operator==(const DocumentChunk&, const DocumentChunk&) = default;
};

enum class Metric { cosine, dot, euclidean };

inline std::string_view to_string(Metric m) noexcept {
    switch (m) {
        case Metric::cosine: return "cosine";
        case Metric::dot: return "dot";
        case Metric::euclidean: return "euclidean";
    }
    return "cosine";
}

inline Metric metric_from_string(std::string_view s) {
    if (s == "cosine") return Metric::cosine;
    if (s == "dot" || s == "mip" || s == "inner_product") return Metric::dot;
    if (s == "euclidean" || s == "l2") return Metric::euclidean;
    throw UsageError("unknown metric '" + std::string(s) + "' (cosine, dot, euclidean)");
}

namespace detail {

inline double dense_dot(const EmbeddingVector& a, const EmbeddingVector& b) noexcept {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double dense_norm(const EmbeddingVector& a) noexcept { return std::sqrt(dense_dot(a, a)); }

}  // namespace detail

struct ScoredChunk {
    std::size_t position;  // entry index inside the index
    double score;          // similarity, or distance for euclidean
};

struct Retrieval {
    Metric metric = Metric::cosine;
    std::vector<ScoredChunk> hits;  // best first
};

/// Flat exhaustive index.
class VectorIndex {
public:
    VectorIndex(std::size_t dim, Metric metric) : dim_(dim), metric_(metric) {}

    void add(DocumentChunk chunk, EmbeddingVector v) {
        if (v.size() != dim_)
            throw DataError("vector index: chunk '" + chunk.id + "' has dimension " + std::to_string(v.size()) +
                            ", expected " + std::to_string(dim_));
        for (double x : v)
            if (!std::isfinite(x)) throw DataError("vector index: non-finite value in chunk '" + chunk.id + "'");
        if (!ids_.insert(chunk.id).second) throw DataError("vector index: duplicate chunk id '" + chunk.id + "'");
        norms_.push_back(detail::dense_norm(v));
        chunks_.push_back(std::move(chunk));
        vectors_.push_back(std::move(v));
    }

    std::size_t dim() const noexcept { return dim_; }
    Metric metric() const noexcept { return metric_; }
    std::size_t size() const noexcept { return chunks_.size(); }
    const DocumentChunk& chunk(std::size_t i) const { return chunks_.at(i); }
    const EmbeddingVector& vector(std::size_t i) const { return vectors_.at(i); }
    const Json& embedder_info() const noexcept { return embedder_info_; }
    void set_embedder_info(Json j) { embedder_info_ = std::move(j); }

    /// Similarity (cosine/dot) or distance (euclidean) between a query and entry i.
    double score(const EmbeddingVector& q, double q_norm, std::size_t i) const noexcept {
        const auto& v = vectors_[i];
        switch (metric_) {
            case Metric::dot: return detail::dense_dot(q, v);
            case Metric::cosine:
                if (q_norm == 0.0 || norms_[i] == 0.0) return 0.0;
                return detail::dense_dot(q, v) / (q_norm * norms_[i]);
            case Metric::euclidean: {
                double s = 0;
                for (std::size_t d = 0; d < dim_; ++d) {
                    const double diff = q[d] - v[d];
                    s += diff * diff;
                }
                return std::sqrt(s);
            }
        }
        return 0.0;
    }

    /// Exact top-k; equal scores are ordered by chunk id. k beyond size returns everything.
    Retrieval search(const EmbeddingVector& q, std::size_t k) const {
        if (k < 1) throw UsageError("retrieve: k must be >= 1");
        if (q.size() != dim_)
            throw UsageError("retrieve: query dimension " + std::to_string(q.size()) + " does not match index dimension " +
                             std::to_string(dim_));
        const double qn = detail::dense_norm(q);
        std::vector<ScoredChunk> all(size());
        for (std::size_t i = 0; i < size(); ++i) all[i] = {i, score(q, qn, i)};
        const bool ascending = metric_ == Metric::euclidean;
        auto better = [&](const ScoredChunk& a, const ScoredChunk& b) {
            if (a.score != b.score) return ascending ? a.score < b.score : a.score > b.score;
            return chunks_[a.position].id < chunks_[b.position].id;
        };
        const auto n = std::min(k, all.size());
        std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), better);
        all.resize(n);
        return {metric_, std::move(all)};
    }

private:
    std::size_t dim_;
    Metric metric_;
    std::vector<DocumentChunk> chunks_;
    std::vector<EmbeddingVector> vectors_;
    std::vector<double> norms_;
    std::set<std::string> ids_;
    Json embedder_info_ = Json::object();
};

inline VectorIndex build_index(const std::vector<DocumentChunk>& chunks, const Embedder& embedder, Metric metric) {
    if (chunks.empty()) throw DataError("build_index: no chunks");
    VectorIndex index(embedder.dim(), metric);
    index.set_embedder_info(embedder.describe());
    for (const auto& c : chunks) {
        EmbeddingVector v;
        try {
            v = embedder.embed(c.text);
        } catch (const Error& e) {
            throw DataError("build_index: cannot embed chunk '" + c.id + "': " + e.what());
        }
        index.add(c, std::move(v));
    }
    return index;
}

inline Retrieval retrieve(const VectorIndex& index, std::string_view query, const Embedder& embedder, std::size_t k) {
    if (embedder.dim() != index.dim())
        throw UsageError("retrieve: embedder dimension " + std::to_string(embedder.dim()) +
                         " does not match index dimension " + std::to_string(index.dim()));
    return index.search(embedder.embed(query), k);
}

inline Json to_json(const VectorIndex& index) {
    Json entries = Json::array();
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto& c = index.chunk(i);
        entries.push_back({{"id", c.id}, {"text", c.text}, {"metadata", c.metadata}, {"vector", index.vector(i)}});
    }
    return {{"dim", index.dim()},
            {"metric", to_string(index.metric())},
            {"embedder", index.embedder_info()},
            {"entries", std::move(entries)}};
}

inline VectorIndex vector_index_from_json(const Json& j) {
    try {
        VectorIndex index(j.at("dim").get<std::size_t>(), metric_from_string(j.at("metric").get<std::string>()));
        if (j.contains("embedder")) index.set_embedder_info(j.at("embedder"));
        for (const auto& e : j.at("entries")) {
            DocumentChunk c{e.at("id").get<std::string>(), e.at("text").get<std::string>(),
                            e.value("metadata", std::map<std::string, std::string>{})};
            index.add(std::move(c), e.at("vector").get<EmbeddingVector>());
        }
        return index;
    } catch (const Json::exception& e) {
        throw DataError(std::string("vector index file: ") + e.what());
    } catch (const UsageError& e) {
        throw DataError(std::string("vector index file: ") + e.what());
    }
}

inline VectorIndex load_index(const std::string& path) { return vector_index_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Rerank

/// Prompt for picking one candidate. task_text holds {{query}} and {{candidates}}.
struct RerankTemplate {
    std::string system_text;
    std::string task_text;
};

inline RerankTemplate default_rerank_template() {
    return {
        "You match noisy mentions of transit stations, written by riders, to official stop names.",
        "Think step by step: consider abbreviations, misspellings, repeated letters and intersections "
        "named by their cross streets. Then finish with a final line of the form \"Answer: <number>\", or "
        "\"Answer: none\" if no candidate is the place meant. The transit agency itself is not a station.\n\n"
        "Example\n"
        "Mention: dundas w stn\n"
        "Candidates:\n1. Dundas Station\n2. Dundas West Station\n3. Dufferin Station\n"
        "Reasoning: \"w\" abbreviates West and \"stn\" abbreviates Station, so the mention is Dundas West Station.\n"
        "Answer: 2\n\n"
        "Mention: {{query}}\n"
        "Candidates:\n{{candidates}}"};
}

struct RerankResult {
    std::optional<std::size_t> choice;  // index into the candidate list
    std::string reply;
    std::vector<std::string> diagnostics;
};

/// Reads the model's selection: "Answer: N", "Answer: none" or an exact candidate name.
inline std::optional<std::size_t> parse_selection(std::string_view reply, const std::vector<std::string>& names,
                                                  std::vector<std::string>& diagnostics) {
    const auto lower = text::to_lower(reply);
    std::string segment;
    if (auto pos = lower.rfind("answer"); pos != std::string::npos) {
        auto rest = std::string_view(reply).substr(pos + 6);
        auto colon = rest.find_first_of(":-=");
        if (colon != std::string_view::npos && colon < 3) rest = rest.substr(colon + 1);
        segment = std::string(rest.substr(0, rest.find('\n')));
    } else {
        auto lines = text::split_lines(reply);
        for (auto it = lines.rbegin(); it != lines.rend(); ++it)
            if (!text::trim_view(*it).empty()) {
                segment = *it;
                break;
            }
    }
    auto seg = text::trim(segment);
    while (!seg.empty() && (seg.front() == '*' || seg.front() == '#' || seg.front() == '"' || seg.front() == '\''))
        seg.erase(seg.begin());
    while (!seg.empty() && (seg.back() == '.' || seg.back() == '*' || seg.back() == '"' || seg.back() == '\''))
        seg.pop_back();
    seg = text::trim(seg);

    if (!seg.empty() && std::isdigit(static_cast<unsigned char>(seg[0]))) {
        std::size_t n = 0;
        for (std::size_t i = 0; i < seg.size() && std::isdigit(static_cast<unsigned char>(seg[i])) && n < 1000; ++i)
            n = n * 10 + static_cast<std::size_t>(seg[i] - '0');
        if (n >= 1 && n <= names.size()) return n - 1;
        diagnostics.push_back("selection " + std::to_string(n) + " is out of range");
        return std::nullopt;
    }
    auto key = text::to_lower(seg);
    if (key.starts_with("none") || key.starts_with("no match") || key.starts_with("n/a") || key.starts_with("no candidate")) {
        diagnostics.push_back("model chose none");
        return std::nullopt;
    }
    for (std::size_t i = 0; i < names.size(); ++i)
        if (text::iequals(text::trim_view(seg), names[i])) return i;
    diagnostics.push_back("unparseable selection: '" + text::utf8_truncate(seg, 80) + "'");
    return std::nullopt;
}

inline RerankResult rerank(Gateway& gateway, std::string_view query, const std::vector<std::string>& candidates,
                           const RerankTemplate& tpl = default_rerank_template()) {
    if (candidates.empty()) throw UsageError("rerank: no candidates");
    std::string list;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        list += std::to_string(i + 1) + ". " + candidates[i] + "\n";
    auto task = text::replace_all(tpl.task_text, "{{candidates}}", list);
    task = text::replace_all(task, "{{query}}", text::replace_all(query, "{{", "{ {"));
    CompletionRequest req{gateway.config().model_id, {{Role::system, tpl.system_text}, {Role::user, task}}, 0.0, 256};
    RerankResult r;
    r.reply = gateway.complete(req).texts.front();
    r.choice = parse_selection(r.reply, candidates, r.diagnostics);
    return r;
}

inline RerankResult rerank(Gateway& gateway, std::string_view query, const VectorIndex& index, const Retrieval& hits,
                           const RerankTemplate& tpl = default_rerank_template()) {
    std::vector<std::string> names;
    for (const auto& h : hits.hits) names.push_back(index.chunk(h.position).text);
    return rerank(gateway, query, names, tpl);
}

// ---------------------------------------------------------------------------
// Station normalization

struct StationMatch {
    std::optional<std::string> name;
    std::string method;  // "alias", "threshold", "rerank", "below_threshold", "empty"
    double best_score = 0;
    std::vector<std::string> diagnostics;
};

struct NormalizeOptions {
    double tau = 0.35;
    std::size_t candidates = 5;
};

/// True for mentions that name the agency rather than a place.
inline bool is_agency_mention(std::string_view mention) {
    auto k = text::to_lower(text::collapse_whitespace(embedding_normal_form(mention)));
    return k == "ttc" || k == "ttc service" || k == "ttc customer service" || k == "the ttc" || k == "ttcnotices" ||
           k == "toronto transit commission";
}

/// Mention -> canonical stop name (always an entry of the index), or none.
inline StationMatch normalize_station(std::string_view mention, const VectorIndex& stops, const Embedder& embedder,
                                      Gateway* gateway = nullptr, const NormalizeOptions& opt = {},
                                      const RerankTemplate& tpl = default_rerank_template()) {
    StationMatch m;
    if (is_agency_mention(mention)) {
        m.method = "alias";
        return m;
    }
    if (embedding_normal_form(mention).empty() || stops.size() == 0) {
        m.method = "empty";
        return m;
    }
    auto hits = retrieve(stops, mention, embedder, opt.candidates);
    m.best_score = hits.hits.front().score;
    auto threshold_rule = [&] {
        if (m.best_score >= opt.tau) {
            m.name = stops.chunk(hits.hits.front().position).text;
            m.method = "threshold";
        } else {
            m.method = "below_threshold";
        }
    };
    if (!gateway) {
        threshold_rule();
        return m;
    }
    try {
        auto r = rerank(*gateway, mention, stops, hits, tpl);
        m.diagnostics = std::move(r.diagnostics);
        m.method = "rerank";
        if (r.choice) m.name = stops.chunk(hits.hits[*r.choice].position).text;
    } catch (const UpstreamError& e) {
        m.diagnostics.push_back(std::string("rerank failed, using threshold: ") + e.what());
        threshold_rule();
    }
    return m;
}

}  // namespace tpulse
