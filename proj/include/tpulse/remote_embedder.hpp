#pragma once

#include <cmath>
#include <string>

#include "tpulse/http_transport.hpp"
#include "tpulse/rag.hpp"

namespace tpulse {

/// Embeddings from an OpenAI-compatible /v1/embeddings endpoint, L2-normalized.
/// With dim == 0 the dimension is learned from one probe request.
class RemoteEmbedder final : public Embedder {
public:
    RemoteEmbedder(GatewayConfig config, std::size_t dim = 0) : config_(std::move(config)), dim_(dim) {
        config_.validate();
        if (dim_ == 0) dim_ = fetch("dimension probe").size();
    }

    EmbeddingVector embed(std::string_view text) const override {
        if (text::trim_view(text).empty()) throw DataError("embed: text is empty");
        auto v = fetch(std::string(text));
        if (v.size() != dim_)
            throw UpstreamError("embedding endpoint returned dimension " + std::to_string(v.size()) + ", expected " +
                                std::to_string(dim_));
        return v;
    }

    std::size_t dim() const override { return dim_; }
    Json describe() const override {
        return {{"kind", "remote"}, {"model", config_.model_id}, {"base_url", config_.base_url}, {"dim", dim_}};
    }

private:
    EmbeddingVector fetch(const std::string& text) const {
        auto reply = http_embedding_call(config_, text);
        EmbeddingVector v;
        try {
            v = reply.at("data").at(0).at("embedding").get<EmbeddingVector>();
        } catch (const Json::exception& e) {
            throw UpstreamError(std::string("embedding endpoint: malformed reply: ") + e.what());
        }
        double sq = 0;
        for (double x : v) {
            if (!std::isfinite(x)) throw UpstreamError("embedding endpoint: non-finite value");
            sq += x * x;
        }
        if (v.empty() || sq == 0) throw UpstreamError("embedding endpoint: empty or zero vector");
        const double inv = 1.0 / std::sqrt(sq);
        for (double& x : v) x *= inv;
        return v;
    }

    GatewayConfig config_;
    std::size_t dim_;
};

}  // namespace tpulse
