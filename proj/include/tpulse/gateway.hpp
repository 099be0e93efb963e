#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tpulse/error.hpp"
#include "tpulse/json_io.hpp"
#include "tpulse/text.hpp"

namespace tpulse {

enum class Role { system, user, assistant };

inline std::string_view to_string(Role r) noexcept {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

inline Role role_from_string(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw DataError("unknown chat role '" + std::string(s) + "'");
}

struct ChatMessage {
    Role role = Role::user;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct CompletionRequest {
    std::string model_id;
    std::vector<ChatMessage> messages;
    double temperature = 0.7;
    int max_tokens = 512;

    void validate() const {
        bool has_user = false;
        for (const auto& m : messages) {
            if (m.role == Role::user) has_user = true;
            if (m.role != Role::assistant && m.content.empty())
                throw UsageError("completion request: empty " + std::string(to_string(m.role)) + " message");
        }
        if (!has_user) throw UsageError("completion request: no user message");
        if (!(temperature >= 0.0 && temperature <= 2.0)) throw UsageError("completion request: temperature outside [0, 2]");
        if (max_tokens < 1) throw UsageError("completion request: max_tokens must be >= 1");
    }

    /// Last user message, which carries the task payload.
    const std::string& last_user_content() const {
        for (auto it = messages.rbegin(); it != messages.rend(); ++it)
            if (it->role == Role::user) return it->content;
        static const std::string empty;
        return empty;
    }
};

/// Wire body of a chat-completion call.
inline Json to_wire_json(const CompletionRequest& r) {
    Json msgs = Json::array();
    for (const auto& m : r.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    return {{"model", r.model_id}, {"messages", std::move(msgs)}, {"temperature", r.temperature}, {"max_tokens", r.max_tokens}};
}

/// Stable hex digest of the message list (roles and contents).
inline std::string request_fingerprint(const std::vector<ChatMessage>& messages) {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& m : messages) {
        h = text::fnv1a64(to_string(m.role), h);
        h = text::fnv1a64("\x1f", h);
        h = text::fnv1a64(m.content, h);
        h = text::fnv1a64("\x1e", h);
    }
    return text::hex64(h);
}

struct CompletionResult {
    std::vector<std::string> texts;
    double latency_ms = 0;
    Json transport_meta = Json::object();
};

struct GatewayConfig {
    std::string base_url = "http://127.0.0.1:8000/v1/chat/completions";
    std::string model_id = "llama-3-8b-instruct";
    std::string credential_env = "TPULSE_LLM_API_KEY";  // name of the variable, never the secret
    int timeout_ms = 60000;
    int max_retries = 3;
    int max_in_flight = 4;
    int backoff_initial_ms = 500;
    int backoff_max_ms = 8000;

    void validate() const {
        if (timeout_ms <= 0) throw UsageError("gateway: timeout_ms must be > 0");
        if (max_retries < 0) throw UsageError("gateway: max_retries must be >= 0");
        if (max_in_flight < 1) throw UsageError("gateway: max_in_flight must be >= 1");
    }

    std::optional<std::string> credential() const {
        if (credential_env.empty()) return std::nullopt;
        const char* v = std::getenv(credential_env.c_str());
        if (!v || !*v) return std::nullopt;
        return std::string(v);
    }
};

inline GatewayConfig gateway_config_from_json(const Json& j) {
    GatewayConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.model_id = j.value("model_id", c.model_id);
    c.credential_env = j.value("credential_env", c.credential_env);
    c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.backoff_initial_ms = j.value("backoff_initial_ms", c.backoff_initial_ms);
    c.backoff_max_ms = j.value("backoff_max_ms", c.backoff_max_ms);
    c.validate();
    return c;
}

inline Json to_json(const GatewayConfig& c) {
    return {{"base_url", c.base_url},           {"model_id", c.model_id},       {"credential_env", c.credential_env},
            {"timeout_ms", c.timeout_ms},       {"max_retries", c.max_retries}, {"max_in_flight", c.max_in_flight},
            {"backoff_initial_ms", c.backoff_initial_ms}, {"backoff_max_ms", c.backoff_max_ms}};
}

// ---------------------------------------------------------------------------
// Transports

/// Outcome of one network (or scripted) call.
struct TransportReply {
    enum class Status {
        ok,
        timeout,           // transient
        server_error,      // 5xx, transient
        rate_limited,      // 429, transient
        connection_error,  // transient
        auth_error,        // 401/403, fatal
        rejected,          // other 4xx, fatal
        malformed,         // unparseable endpoint reply, fatal
        script_exhausted,  // scripted transport ran out of replies, fatal
    };
    Status status = Status::ok;
    std::string text;
    int http_status = 0;
    std::string detail;

    bool transient() const noexcept {
        return status == Status::timeout || status == Status::server_error || status == Status::rate_limited ||
               status == Status::connection_error;
    }
};

inline std::string_view to_string(TransportReply::Status s) noexcept {
    using S = TransportReply::Status;
    switch (s) {
        case S::ok: return "ok";
        case S::timeout: return "timeout";
        case S::server_error: return "server_error";
        case S::rate_limited: return "rate_limited";
        case S::connection_error: return "connection_error";
        case S::auth_error: return "auth_error";
        case S::rejected: return "rejected";
        case S::malformed: return "malformed";
        case S::script_exhausted: return "script_exhausted";
    }
    return "unknown";
}

class Transport {
public:
    virtual ~Transport() = default;
    virtual TransportReply send(const CompletionRequest& request, const GatewayConfig& config) = 0;
    virtual std::string name() const = 0;
};

/// Adapts a callable; handy for tests that compute replies from the prompt.
class FunctionTransport final : public Transport {
public:
    using Fn = std::function<TransportReply(const CompletionRequest&)>;
    explicit FunctionTransport(Fn fn) : fn_(std::move(fn)) {}
    TransportReply send(const CompletionRequest& request, const GatewayConfig&) override { return fn_(request); }
    std::string name() const override { return "function"; }

private:
    Fn fn_;
};

/// Canned replies keyed by request. Lookup order: exact message fingerprint,
/// then the first rule whose substrings all occur in the last user message,
/// then the fallback queue. Each matched queue is consumed front to back; a
/// drained queue no longer matches.
///
/// Script JSON:
///   {"fingerprints": {"<hex>": [reply, ...]},
///    "rules": [{"contains": "text" | ["a", "b"], "replies": [reply, ...]}],
///    "fallback": [reply, ...],
///    "latency_ms": 0}
/// where reply is a string or {"text": ...} or {"error": "timeout" | "server_error" |
/// "rate_limited" | "connection_error" | "auth" | "rejected" | "malformed"}.
class ScriptedTransport final : public Transport {
public:
    using Queue = std::deque<TransportReply>;

    static TransportReply text_reply(std::string t) { return {TransportReply::Status::ok, std::move(t), 200, {}}; }
    static TransportReply failure(TransportReply::Status s) { return {s, {}, 0, "scripted " + std::string(to_string(s))}; }

    void add_fingerprint(const std::string& fp, std::vector<TransportReply> replies) {
        std::lock_guard lock(mu_);
        auto& q = by_fingerprint_[fp];
        q.insert(q.end(), replies.begin(), replies.end());
    }
    void add_rule(std::vector<std::string> contains, std::vector<TransportReply> replies) {
        std::lock_guard lock(mu_);
        rules_.push_back({std::move(contains), Queue(replies.begin(), replies.end())});
    }
    void add_fallback(std::vector<TransportReply> replies) {
        std::lock_guard lock(mu_);
        fallback_.insert(fallback_.end(), replies.begin(), replies.end());
    }
    void set_latency(std::chrono::milliseconds d) { latency_ = d; }

    TransportReply send(const CompletionRequest& request, const GatewayConfig&) override {
        struct Tracker {
            ScriptedTransport& t;
            explicit Tracker(ScriptedTransport& s) : t(s) {
                std::lock_guard lock(t.mu_);
                ++t.calls_;
                t.peak_ = std::max(t.peak_, ++t.in_flight_);
            }
            ~Tracker() {
                std::lock_guard lock(t.mu_);
                --t.in_flight_;
            }
        } tracker(*this);
        if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

        std::lock_guard lock(mu_);
        if (auto it = by_fingerprint_.find(request_fingerprint(request.messages));
            it != by_fingerprint_.end() && !it->second.empty())
            return pop(it->second);
        const auto& payload = request.last_user_content();
        for (auto& rule : rules_) {
            if (rule.replies.empty()) continue;
            bool all = true;
            for (const auto& needle : rule.contains) all = all && payload.find(needle) != std::string::npos;
            if (all) return pop(rule.replies);
        }
        return pop(fallback_);
    }

    std::string name() const override { return "scripted"; }

    /// Highest number of concurrent send() calls observed.
    int peak_in_flight() const {
        std::lock_guard lock(mu_);
        return peak_;
    }
    std::size_t calls() const {
        std::lock_guard lock(mu_);
        return calls_;
    }

    static ScriptedTransport from_json(const Json& j);

    static std::unique_ptr<ScriptedTransport> load(const std::string& path) {
        return std::make_unique<ScriptedTransport>(from_json(read_json_file(path)));
    }

    ScriptedTransport() = default;
    ScriptedTransport(ScriptedTransport&& o) noexcept
        : by_fingerprint_(std::move(o.by_fingerprint_)), rules_(std::move(o.rules_)), fallback_(std::move(o.fallback_)),
          latency_(o.latency_) {}

private:
    struct Rule {
        std::vector<std::string> contains;
        Queue replies;
    };

    static TransportReply pop(Queue& q) {
        if (q.empty()) return {TransportReply::Status::script_exhausted, {}, 0, "script exhausted"};
        auto r = std::move(q.front());
        q.pop_front();
        return r;
    }

    mutable std::mutex mu_;
    std::map<std::string, Queue> by_fingerprint_;
    std::vector<Rule> rules_;
    Queue fallback_;
    std::chrono::milliseconds latency_{0};
    int in_flight_ = 0;
    int peak_ = 0;
    std::size_t calls_ = 0;
};

namespace detail {

inline TransportReply scripted_reply_from_json(const Json& r) {
    using S = TransportReply::Status;
    if (r.is_string()) return ScriptedTransport::text_reply(r.get<std::string>());
    if (r.is_object() && r.contains("text")) return ScriptedTransport::text_reply(r.at("text").get<std::string>());
    if (r.is_object() && r.contains("error")) {
        auto e = r.at("error").get<std::string>();
        static const std::map<std::string, S> kinds{{"timeout", S::timeout},
                                                     {"server_error", S::server_error},
                                                     {"rate_limited", S::rate_limited},
                                                     {"connection_error", S::connection_error},
                                                     {"auth", S::auth_error},
                                                     {"rejected", S::rejected},
                                                     {"malformed", S::malformed}};
        auto it = kinds.find(e);
        if (it == kinds.end()) throw DataError("mock script: unknown error kind '" + e + "'");
        return ScriptedTransport::failure(it->second);
    }
    throw DataError("mock script: reply must be a string, {\"text\":...} or {\"error\":...}");
}

inline std::vector<TransportReply> scripted_replies_from_json(const Json& arr) {
    if (!arr.is_array()) throw DataError("mock script: replies must be an array");
    std::vector<TransportReply> out;
    for (const auto& r : arr) out.push_back(scripted_reply_from_json(r));
    return out;
}

}  // namespace detail

inline ScriptedTransport ScriptedTransport::from_json(const Json& j) {
    ScriptedTransport t;
    try {
        if (j.contains("fingerprints"))
            for (const auto& [fp, replies] : j.at("fingerprints").items())
                t.add_fingerprint(fp, detail::scripted_replies_from_json(replies));
        if (j.contains("rules"))
            for (const auto& rule : j.at("rules")) {
                std::vector<std::string> contains;
                const auto& c = rule.at("contains");
                if (c.is_string())
                    contains.push_back(c.get<std::string>());
                else
                    contains = c.get<std::vector<std::string>>();
                t.add_rule(std::move(contains), detail::scripted_replies_from_json(rule.at("replies")));
            }
        if (j.contains("fallback")) t.add_fallback(detail::scripted_replies_from_json(j.at("fallback")));
        if (j.contains("latency_ms")) t.set_latency(std::chrono::milliseconds(j.at("latency_ms").get<int>()));
    } catch (const Json::exception& e) {
        throw DataError(std::string("mock script: ") + e.what());
    }
    return t;
}

// ---------------------------------------------------------------------------
// Gateway

class GatewayError : public UpstreamError {
public:
    enum class Kind { auth, retries_exhausted, malformed_reply, rejected, script_exhausted };
    GatewayError(Kind kind, const std::string& what) : UpstreamError(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Counting gate on concurrent transport calls.
class InFlightLimiter {
public:
    explicit InFlightLimiter(int limit) : limit_(limit) {}

    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return active_ < limit_; });
        peak_ = std::max(peak_, ++active_);
    }
    void release() {
        {
            std::lock_guard lock(mu_);
            --active_;
        }
        cv_.notify_one();
    }
    int peak() const {
        std::lock_guard lock(mu_);
        return peak_;
    }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    int limit_;
    int active_ = 0;
    int peak_ = 0;
};

/// Thread-safe front door to a chat-completion transport: retries transient
/// failures with exponential backoff and bounds concurrent calls.
class Gateway {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    Gateway(GatewayConfig config, std::shared_ptr<Transport> transport)
        : config_(std::move(config)), transport_(std::move(transport)),
          sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
        config_.validate();
        if (!transport_) throw UsageError("gateway: no transport");
        limiter_ = std::make_unique<InFlightLimiter>(config_.max_in_flight);
    }

    const GatewayConfig& config() const noexcept { return config_; }
    Transport& transport() noexcept { return *transport_; }
    void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }
    int peak_in_flight() const { return limiter_->peak(); }

    /// One completion. Transient failures are retried up to max_retries times.
    CompletionResult complete(const CompletionRequest& request) {
        request.validate();
        using S = TransportReply::Status;
        const auto started = std::chrono::steady_clock::now();
        std::vector<std::string> failures;
        for (int attempt = 0;; ++attempt) {
            limiter_->acquire();
            TransportReply reply;
            try {
                reply = transport_->send(request, config_);
            } catch (...) {
                limiter_->release();
                throw;
            }
            limiter_->release();

            if (reply.status == S::ok) {
                CompletionResult r;
                r.texts.push_back(std::move(reply.text));
                r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
                r.transport_meta = {{"transport", transport_->name()},
                                    {"attempts", attempt + 1},
                                    {"retries", attempt},
                                    {"failures", failures}};
                return r;
            }
            auto what = std::string(to_string(reply.status)) + (reply.detail.empty() ? "" : ": " + reply.detail);
            switch (reply.status) {
                case S::auth_error: throw GatewayError(GatewayError::Kind::auth, "authentication failed (" + what + ")");
                case S::malformed: throw GatewayError(GatewayError::Kind::malformed_reply, "malformed endpoint reply (" + what + ")");
                case S::rejected: throw GatewayError(GatewayError::Kind::rejected, "request rejected (" + what + ")");
                case S::script_exhausted: throw GatewayError(GatewayError::Kind::script_exhausted, "script exhausted");
                default: break;
            }
            failures.push_back(what);
            if (attempt >= config_.max_retries)
                throw GatewayError(GatewayError::Kind::retries_exhausted,
                                   "retries exhausted after " + std::to_string(attempt + 1) + " attempt(s); last: " + what);
            sleeper_(backoff(attempt));
        }
    }

    /// k independent single-sample calls, in issuance order.
    std::vector<std::string> complete_samples(const CompletionRequest& request, int k) {
        if (k < 1) throw UsageError("complete_samples: k must be >= 1");
        std::vector<std::string> out;
        out.reserve(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) out.push_back(std::move(complete(request).texts.front()));
        return out;
    }

    std::chrono::milliseconds backoff(int attempt) const {
        long long d = config_.backoff_initial_ms;
        for (int i = 0; i < attempt && d < config_.backoff_max_ms; ++i) d *= 2;
        return std::chrono::milliseconds(std::min<long long>(d, config_.backoff_max_ms));
    }

private:
    GatewayConfig config_;
    std::shared_ptr<Transport> transport_;
    std::unique_ptr<InFlightLimiter> limiter_;
    Sleeper sleeper_;
};

}  // namespace tpulse
