#pragma once

// Network-backed transports. Kept apart from gateway.hpp so that code which
// only needs scripted replies does not pull in httplib.

#include <httplib.h>

#include <string>
#include <utility>

#include "tpulse/gateway.hpp"

namespace tpulse {

struct ParsedUrl {
    std::string scheme_host_port;  // "http://host:port"
    std::string path;              // "/v1/chat/completions"
};

inline ParsedUrl parse_url(const std::string& url, std::string_view default_path) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw UsageError("invalid endpoint URL '" + url + "' (missing scheme)");
    auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw UsageError("unsupported URL scheme '" + scheme + "'");
    auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl p;
    p.scheme_host_port = url.substr(0, path_start);
    p.path = path_start == std::string::npos ? "" : url.substr(path_start);
    if (p.path.empty() || p.path == "/") p.path = std::string(default_path);
    if (p.scheme_host_port.size() <= scheme_end + 3) throw UsageError("invalid endpoint URL '" + url + "' (no host)");
    return p;
}

namespace detail {

inline TransportReply classify_http_failure(const httplib::Result& res) {
    using S = TransportReply::Status;
    if (!res) {
        auto err = res.error();
        auto detail = httplib::to_string(err);
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read || err == httplib::Error::Write)
            return {S::timeout, {}, 0, detail};
        return {S::connection_error, {}, 0, detail};
    }
    const int st = res->status;
    auto detail = "HTTP " + std::to_string(st);
    if (st == 401 || st == 403) return {S::auth_error, {}, st, detail};
    if (st == 429) return {S::rate_limited, {}, st, detail};
    if (st == 408) return {S::timeout, {}, st, detail};
    if (st >= 500) return {S::server_error, {}, st, detail};
    return {S::rejected, {}, st, detail};
}

inline httplib::Headers auth_headers(const GatewayConfig& config) {
    httplib::Headers h;
    if (auto key = config.credential()) h.emplace("Authorization", "Bearer " + *key);
    return h;
}

inline void apply_timeouts(httplib::Client& cli, int timeout_ms) {
    const auto sec = timeout_ms / 1000;
    const auto usec = (timeout_ms % 1000) * 1000;
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);
}

}  // namespace detail

/// OpenAI-style chat-completion endpoint over HTTP(S).
class HttpTransport final : public Transport {
public:
    TransportReply send(const CompletionRequest& request, const GatewayConfig& config) override {
        using S = TransportReply::Status;
        auto url = parse_url(config.base_url, "/v1/chat/completions");
        httplib::Client cli(url.scheme_host_port);
        detail::apply_timeouts(cli, config.timeout_ms);
        auto body = to_wire_json(request);
        if (request.model_id.empty()) body["model"] = config.model_id;
        auto res = cli.Post(url.path, detail::auth_headers(config), body.dump(), "application/json");
        if (!res || res->status != 200) return detail::classify_http_failure(res);
        try {
            auto reply = Json::parse(res->body);
            const auto& content = reply.at("choices").at(0).at("message").at("content");
            if (!content.is_string()) return {S::malformed, {}, 200, "message content is not a string"};
            return {S::ok, content.get<std::string>(), 200, {}};
        } catch (const Json::exception& e) {
            return {S::malformed, {}, 200, e.what()};
        }
    }
    std::string name() const override { return "http"; }
};

/// POST {model, input:[text]} -> {data:[{embedding:[...]}]}; returns the raw body on success.
inline Json http_embedding_call(const GatewayConfig& config, const std::string& text) {
    auto url = parse_url(config.base_url, "/v1/embeddings");
    httplib::Client cli(url.scheme_host_port);
    detail::apply_timeouts(cli, config.timeout_ms);
    Json body{{"model", config.model_id}, {"input", Json::array({text})}};
    httplib::Result res;
    for (int attempt = 0;; ++attempt) {
        res = cli.Post(url.path, detail::auth_headers(config), body.dump(), "application/json");
        if (res && res->status == 200) break;
        auto failure = detail::classify_http_failure(res);
        if (!failure.transient() || attempt >= config.max_retries)
            throw UpstreamError("embedding endpoint: " + std::string(to_string(failure.status)) + " (" + failure.detail + ")");
        std::this_thread::sleep_for(std::chrono::milliseconds(
            std::min<long long>(static_cast<long long>(config.backoff_initial_ms) << std::min(attempt, 20), config.backoff_max_ms)));
    }
    try {
        return Json::parse(res->body);
    } catch (const Json::exception& e) {
        throw UpstreamError(std::string("embedding endpoint: malformed reply: ") + e.what());
    }
}

/// HTTP gateway, or a replaying one when a mock script path is given.
inline Gateway make_gateway(const GatewayConfig& config, const std::string& mock_script = {}) {
    std::shared_ptr<Transport> t;
    if (mock_script.empty()) t = std::make_shared<HttpTransport>();
    else t = std::shared_ptr<Transport>(ScriptedTransport::load(mock_script));
    return Gateway(config, std::move(t));
}

}  // namespace tpulse
