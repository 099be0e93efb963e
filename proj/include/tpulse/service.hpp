#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "tpulse/analytics.hpp"
#include "tpulse/corpus.hpp"
#include "tpulse/event_log.hpp"
#include "tpulse/extraction.hpp"
#include "tpulse/gtfs.hpp"
#include "tpulse/http_transport.hpp"
#include "tpulse/rag.hpp"

namespace tpulse {

// ---------------------------------------------------------------------------
// Configuration

struct ServiceConfig {
    std::string data_dir = "tpulse-data";
    std::string host = "127.0.0.1";
    int port = 8080;
    GatewayConfig gateway;
    std::string mock_script;     // replay LLM replies from this file instead of HTTP
    std::string stops_path;      // GTFS stops.txt for station normalization
    std::string docs_index;      // saved documentation index (fallback embedder)
    std::string stopwords_path;  // empty: built-in list
    bool rerank_stations = false;
    SpikeOptions spikes;
    std::size_t top_n = 5;
    int baseline_hours = 168;
    int extract_k = 3;
    int extract_workers = 4;
    std::size_t queue_depth = 4;
    std::uint64_t snapshot_every = 500;
    bool fsync = true;

    void validate() const {
        if (data_dir.empty()) throw UsageError("config: data_dir is required");
        if (port < 0 || port > 65535) throw UsageError("config: port out of range");
        if (extract_k < 1 || extract_k > 15) throw UsageError("config: extract.k must be in [1, 15]");
        if (extract_workers < 1) throw UsageError("config: extract.workers must be >= 1");
        if (baseline_hours < 1) throw UsageError("config: thresholds.baseline_hours must be >= 1");
        if (queue_depth < 1) throw UsageError("config: queue_depth must be >= 1");
        gateway.validate();
    }
};

inline ServiceConfig service_config_from_json(const Json& j) {
    ServiceConfig c;
    try {
        c.data_dir = j.value("data_dir", c.data_dir);
        if (j.contains("listen")) {
            c.host = j["listen"].value("host", c.host);
            c.port = j["listen"].value("port", c.port);
        }
        if (j.contains("gateway")) c.gateway = gateway_config_from_json(j["gateway"]);
        c.mock_script = j.value("mock_script", c.mock_script);
        c.stops_path = j.value("stops", c.stops_path);
        c.docs_index = j.value("docs_index", c.docs_index);
        c.stopwords_path = j.value("stopwords", c.stopwords_path);
        c.rerank_stations = j.value("rerank_stations", c.rerank_stations);
        if (j.contains("thresholds")) {
            const auto& t = j["thresholds"];
            c.spikes.z_threshold = t.value("z_threshold", c.spikes.z_threshold);
            c.spikes.min_count = t.value("min_count", c.spikes.min_count);
            c.top_n = t.value("top_n", c.top_n);
            c.baseline_hours = t.value("baseline_hours", c.baseline_hours);
        }
        if (j.contains("extract")) {
            c.extract_k = j["extract"].value("k", c.extract_k);
            c.extract_workers = j["extract"].value("workers", c.extract_workers);
        }
        c.queue_depth = j.value("queue_depth", c.queue_depth);
        c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
        c.fsync = j.value("fsync", c.fsync);
    } catch (const Json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return c;
}

inline ServiceConfig load_service_config(const std::string& path) {
    return service_config_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// State

enum class ReviewStatus { pending, corrected, confirmed };

inline std::string_view to_string(ReviewStatus s) noexcept {
    switch (s) {
        case ReviewStatus::pending: return "pending";
        case ReviewStatus::corrected: return "corrected";
        case ReviewStatus::confirmed: return "confirmed";
    }
    return "pending";
}

inline std::optional<ReviewStatus> review_status_from_string(std::string_view s) {
    for (auto r : {ReviewStatus::pending, ReviewStatus::corrected, ReviewStatus::confirmed})
        if (s == to_string(r)) return r;
    return std::nullopt;
}

struct ReviewItem {
    std::string tweet_id;
    ReviewStatus status = ReviewStatus::pending;
    std::vector<Field> low_agreement_fields;  // as of the latest extraction
    std::set<Field> pending_fields;
    bool changed = false;  // some correction altered a value
    Json history = Json::array();
};

enum class JobStatus { queued, running, done, failed };

inline std::string_view to_string(JobStatus s) noexcept {
    switch (s) {
        case JobStatus::queued: return "queued";
        case JobStatus::running: return "running";
        case JobStatus::done: return "done";
        case JobStatus::failed: return "failed";
    }
    return "queued";
}

inline JobStatus job_status_from_string(std::string_view s) {
    for (auto j : {JobStatus::queued, JobStatus::running, JobStatus::done, JobStatus::failed})
        if (s == to_string(j)) return j;
    throw DataError("unknown job status '" + std::string(s) + "'");
}

struct Job {
    std::string id;
    std::string kind = "extract";
    JobStatus status = JobStatus::queued;
    std::size_t completed = 0;
    std::size_t total = 0;
    std::size_t failed_items = 0;
    std::string submitted_at;
    std::string started_at;
    std::string finished_at;
    Json params = Json::object();
    std::string error;
};

inline Json to_json(const Job& j) {
    Json out{{"id", j.id},
             {"kind", j.kind},
             {"status", to_string(j.status)},
             {"progress", {{"completed", j.completed}, {"total", j.total}}},
             {"failed_items", j.failed_items},
             {"submitted_at", j.submitted_at},
             {"params", j.params}};
    if (!j.started_at.empty()) out["started_at"] = j.started_at;
    if (!j.finished_at.empty()) out["finished_at"] = j.finished_at;
    if (!j.error.empty()) out["error"] = j.error;
    return out;
}

inline Job job_from_json(const Json& j) {
    Job out;
    out.id = j.at("id").get<std::string>();
    out.kind = j.value("kind", out.kind);
    out.status = job_status_from_string(j.value("status", "queued"));
    if (j.contains("progress")) {
        out.completed = j["progress"].value("completed", std::size_t{0});
        out.total = j["progress"].value("total", std::size_t{0});
    }
    out.failed_items = j.value("failed_items", std::size_t{0});
    out.submitted_at = j.value("submitted_at", "");
    out.started_at = j.value("started_at", "");
    out.finished_at = j.value("finished_at", "");
    out.params = j.value("params", Json::object());
    out.error = j.value("error", "");
    return out;
}

inline Json to_json(const TweetRecord& t) {
    return {{"id", t.id}, {"created_at", format_iso8601(t.created_at)}, {"author", t.author}, {"text", t.text}};
}

inline TweetRecord tweet_from_json(const Json& j) {
    TweetRecord t;
    t.id = j.at("id").get<std::string>();
    auto ts = parse_iso8601(j.at("created_at").get<std::string>());
    if (!ts) throw DataError("tweet '" + t.id + "': bad created_at");
    t.created_at = *ts;
    t.author = j.value("author", "");
    t.text = j.at("text").get<std::string>();
    return t;
}

/// Sets one field from a JSON value through the extraction gates and marks it
/// human-verified. Returns false when the value fails its gate.
inline bool set_verified_field(ExtractedRecord& r, Field f, const Json& value,
                               const std::optional<std::string>& canonical) {
    auto as_text = [&]() -> std::optional<std::string> {
        if (value.is_string()) return value.get<std::string>();
        if (value.is_boolean()) return value.get<bool>() ? "true" : "false";
        if (value.is_null()) return std::string("none");
        return std::nullopt;
    };
    auto t = as_text();
    if (!t) return false;
    switch (f) {
        case Field::station:
            r.station_mention = clean_station(*t);
            r.station_canonical = r.station_mention ? canonical : std::nullopt;
            break;
        case Field::sentiment: {
            auto s = coerce_sentiment(*t);
            if (!s) return false;
            r.sentiment = *s;
            break;
        }
        case Field::sarcasm: {
            auto s = coerce_sarcasm(*t);
            if (!s) return false;
            r.sarcasm = *s;
            break;
        }
        case Field::problem_topic: {
            auto s = coerce_topic(*t);
            if (!s) return false;
            r.problem_topic = *s;
            break;
        }
        case Field::problem_summary: r.problem_summary = cap_summary(*t); break;
    }
    r.flags[f] = {FieldStatus::parsed, true};
    return true;
}

struct ServiceState {
    std::map<std::string, TweetRecord> tweets;
    std::map<std::string, ConsensusResult> records;
    std::map<std::string, ReviewItem> review;
    std::map<std::string, Job> jobs;
    std::uint64_t next_job = 1;

    std::vector<ConsensusResult> record_list() const {
        std::vector<ConsensusResult> out;
        out.reserve(records.size());
        for (const auto& [_, r] : records) out.push_back(r);
        return out;
    }

    /// Deterministic serialization; object keys are sorted.
    Json to_json() const {
        Json t = Json::array();
        for (const auto& [_, tw] : tweets) t.push_back(tpulse::to_json(tw));
        Json rec = Json::object();
        for (const auto& [id, r] : records) rec[id] = tpulse::to_json(r);
        Json rev = Json::object();
        for (const auto& [id, item] : review) {
            Json low = Json::array(), pend = Json::array();
            for (auto f : item.low_agreement_fields) low.push_back(to_string(f));
            for (auto f : item.pending_fields) pend.push_back(to_string(f));
            rev[id] = {{"status", to_string(item.status)},
                       {"low_agreement_fields", low},
                       {"pending_fields", pend},
                       {"changed", item.changed},
                       {"history", item.history}};
        }
        Json jobs_j = Json::object();
        for (const auto& [id, j] : jobs) jobs_j[id] = tpulse::to_json(j);
        return {{"tweets", t}, {"records", rec}, {"review", rev}, {"jobs", jobs_j}, {"next_job", next_job}};
    }

    std::string hash() const { return text::hex64(text::fnv1a64(to_json().dump())); }

    static ServiceState from_json(const Json& j) {
        ServiceState s;
        try {
            for (const auto& t : j.at("tweets")) {
                auto tw = tweet_from_json(t);
                s.tweets[tw.id] = tw;
            }
            for (const auto& [id, r] : j.at("records").items()) s.records[id] = consensus_from_json(r);
            for (const auto& [id, r] : j.at("review").items()) {
                ReviewItem item;
                item.tweet_id = id;
                auto st = review_status_from_string(r.at("status").get<std::string>());
                if (!st) throw DataError("snapshot: bad review status");
                item.status = *st;
                for (const auto& f : r.at("low_agreement_fields"))
                    if (auto ff = field_from_string(f.get<std::string>())) item.low_agreement_fields.push_back(*ff);
                for (const auto& f : r.at("pending_fields"))
                    if (auto ff = field_from_string(f.get<std::string>())) item.pending_fields.insert(*ff);
                item.changed = r.value("changed", false);
                item.history = r.value("history", Json::array());
                s.review[id] = std::move(item);
            }
            for (const auto& [id, jj] : j.at("jobs").items()) s.jobs[id] = job_from_json(jj);
            s.next_job = j.at("next_job").get<std::uint64_t>();
        } catch (const Json::exception& e) {
            throw DataError(std::string("snapshot: ") + e.what());
        }
        return s;
    }

    void merge_extraction(ConsensusResult incoming) {
        const auto id = incoming.record.tweet_id;
        if (auto it = records.find(id); it != records.end()) {
            // human-verified fields are never overwritten by a later extraction
            for (auto f : kFields) {
                if (!it->second.record.flag(f).human_verified) continue;
                detail::copy_field(incoming.record, it->second.record, f);
                incoming.record.flags[f] = it->second.record.flag(f);
            }
        }
        auto low = incoming.low_agreement_fields();
        records[id] = std::move(incoming);
        auto rit = review.find(id);
        if (!low.empty()) {
            auto& item = review[id];
            item.tweet_id = id;
            item.status = ReviewStatus::pending;
            item.low_agreement_fields = low;
            item.pending_fields = {low.begin(), low.end()};
        } else if (rit != review.end() && rit->second.status == ReviewStatus::pending) {
            rit->second.pending_fields.clear();
            rit->second.low_agreement_fields.clear();
            rit->second.status = rit->second.changed ? ReviewStatus::corrected : ReviewStatus::confirmed;
        }
    }

    void apply(const Json& ev) {
        const auto type = ev.at("type").get<std::string>();
        try {
            if (type == "ingest") {
                for (const auto& t : ev.at("tweets")) {
                    auto tw = tweet_from_json(t);
                    tweets.emplace(tw.id, tw);
                }
            } else if (type == "job_submitted") {
                auto job = job_from_json(ev.at("job"));
                next_job = std::max(next_job, ev.at("next_job").get<std::uint64_t>());
                jobs[job.id] = std::move(job);
            } else if (type == "job_started") {
                auto& j = jobs.at(ev.at("id").get<std::string>());
                j.status = JobStatus::running;
                j.total = ev.at("total").get<std::size_t>();
                j.started_at = ev.at("at").get<std::string>();
            } else if (type == "extraction") {
                merge_extraction(consensus_from_json(ev.at("result")));
                ++jobs.at(ev.at("job_id").get<std::string>()).completed;
            } else if (type == "extraction_error") {
                auto& j = jobs.at(ev.at("job_id").get<std::string>());
                ++j.completed;
                ++j.failed_items;
                j.error = ev.at("tweet_id").get<std::string>() + ": " + ev.at("error").get<std::string>();
            } else if (type == "job_finished") {
                auto& j = jobs.at(ev.at("id").get<std::string>());
                j.status = job_status_from_string(ev.at("status").get<std::string>());
                j.finished_at = ev.at("at").get<std::string>();
                if (ev.contains("error")) j.error = ev["error"].get<std::string>();
            } else if (type == "correction") {
                apply_correction(ev);
            } else {
                throw DataError("unknown event type '" + type + "'");
            }
        } catch (const Json::exception& e) {
            throw DataError("event " + ev.value("seq", Json(0)).dump() + " (" + type + "): " + e.what());
        } catch (const std::out_of_range& e) {
            throw DataError("event " + ev.value("seq", Json(0)).dump() + " (" + type + ") refers to an unknown entity");
        }
    }

private:
    void apply_correction(const Json& ev) {
        const auto id = ev.at("tweet_id").get<std::string>();
        const auto field = field_from_string(ev.at("field").get<std::string>());
        if (!field) throw DataError("correction: unknown field");
        auto& rec = records.at(id);
        auto& item = review.at(id);
        const auto before = detail::vote_key(rec.record, *field);
        std::optional<std::string> canonical;
        if (ev.contains("canonical") && ev["canonical"].is_string()) canonical = ev["canonical"].get<std::string>();
        if (!set_verified_field(rec.record, *field, ev.at("value"), canonical))
            throw DataError("correction: value fails its gate");
        item.changed |= detail::vote_key(rec.record, *field) != before;
        item.pending_fields.erase(*field);
        item.history.push_back({{"field", to_string(*field)},
                                {"value", ev.at("value")},
                                {"reviewer", ev.at("reviewer")},
                                {"at", ev.at("at")}});
        if (item.pending_fields.empty()) item.status = item.changed ? ReviewStatus::corrected : ReviewStatus::confirmed;
    }
};

// ---------------------------------------------------------------------------
// Request handling

struct ServiceRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct ServiceResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;

    Json json() const { return Json::parse(body); }
};

inline ServiceResponse json_response(int status, const Json& j) { return {status, "application/json", j.dump()}; }

inline ServiceResponse error_response(int status, const std::string& message) {
    return json_response(status, {{"error", message}, {"status", status}});
}

class Service {
public:
    /// Opens the data directory and replays the event log. A null transport
    /// means one is built from the config (mock script or HTTP).
    explicit Service(ServiceConfig config, std::shared_ptr<Transport> transport = nullptr)
        : config_(std::move(config)), log_(config_.data_dir, config_.fsync),
          gateway_(config_.gateway, transport ? transport : default_transport(config_)) {
        config_.validate();
        if (auto snap = log_.load_snapshot()) {
            state_ = ServiceState::from_json((*snap)["state"]);
            recovery_ = log_.replay((*snap)["seq"].get<std::uint64_t>(), [&](const Json& ev) { state_.apply(ev); });
        } else {
            recovery_ = log_.replay(0, [&](const Json& ev) { state_.apply(ev); });
        }
        stopwords_ = config_.stopwords_path.empty() ? default_stopwords() : load_stopwords(config_.stopwords_path);
        if (!config_.stops_path.empty()) {
            stop_names_ = stop_chunks(parse_stops(config_.stops_path));
            stops_ = std::make_unique<VectorIndex>(build_index(stop_names_, embedder_, Metric::cosine));
        }
        if (!config_.docs_index.empty()) docs_ = std::make_unique<VectorIndex>(load_index(config_.docs_index));
        clock_ = [] { return std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()); };
    }

    ~Service() { stop(); }
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    const ReplayReport& recovery() const noexcept { return recovery_; }
    const ServiceConfig& config() const noexcept { return config_; }
    Gateway& gateway() noexcept { return gateway_; }
    void set_clock(std::function<Timestamp()> clock) { clock_ = std::move(clock); }

    std::string state_hash() const {
        std::shared_lock lk(mu_);
        return state_.hash();
    }
    Json state_json() const {
        std::shared_lock lk(mu_);
        return state_.to_json();
    }

    /// Starts the job worker. Jobs left running by a previous process are
    /// marked failed; queued ones are picked up again.
    void start() {
        if (worker_.joinable()) return;
        {
            std::unique_lock lk(mu_);
            {
                std::lock_guard qlk(q_mu_);
                queue_.clear();
            }
            for (const auto& [id, job] : state_.jobs) {
                if (job.status == JobStatus::running)
                    commit_locked({{"type", "job_finished"},
                                   {"id", id},
                                   {"status", "failed"},
                                   {"error", "interrupted by restart"},
                                   {"at", now_iso()}});
                else if (job.status == JobStatus::queued)
                    enqueue(id);
            }
        }
        stopping_ = false;
        worker_ = std::thread([this] { worker_loop(); });
    }

    void stop() {
        {
            std::lock_guard lk(q_mu_);
            stopping_ = true;
        }
        q_cv_.notify_all();
        if (worker_.joinable()) worker_.join();
    }

    /// Blocks until no job is queued or running.
    void wait_idle() {
        std::unique_lock lk(q_mu_);
        idle_cv_.wait(lk, [&] { return queue_.empty() && !busy_; });
    }

    ServiceResponse handle(const ServiceRequest& req) {
        try {
            return route(req);
        } catch (const UsageError& e) {
            return error_response(400, e.what());
        } catch (const DataError& e) {
            return error_response(400, e.what());
        } catch (const Json::exception& e) {
            return error_response(400, std::string("malformed request: ") + e.what());
        } catch (const std::exception& e) {
            return error_response(500, e.what());
        }
    }

private:
    static std::shared_ptr<Transport> default_transport(const ServiceConfig& c) {
        if (c.mock_script.empty()) return std::make_shared<HttpTransport>();
        return std::shared_ptr<Transport>(ScriptedTransport::load(c.mock_script));
    }

    std::string now_iso() const { return format_iso8601(clock_()); }

    void commit_locked(Json ev) {
        log_.append(ev);
        state_.apply(ev);
        if (config_.snapshot_every && log_.last_seq() % config_.snapshot_every == 0) log_.write_snapshot(state_.to_json());
    }

    void commit(Json ev) {
        std::unique_lock lk(mu_);
        commit_locked(std::move(ev));
    }

    static std::vector<std::string> segments(std::string_view path) {
        std::vector<std::string> out;
        std::size_t i = 0;
        while (i < path.size()) {
            while (i < path.size() && path[i] == '/') ++i;
            auto j = path.find('/', i);
            if (j == std::string_view::npos) j = path.size();
            if (j > i) out.emplace_back(path.substr(i, j - i));
            i = j;
        }
        return out;
    }

    ServiceResponse route(const ServiceRequest& req) {
        const auto seg = segments(req.path);
        const bool get = req.method == "GET", post = req.method == "POST";
        auto at = [&](std::size_t i) -> std::string { return i < seg.size() ? seg[i] : std::string(); };
        if (at(0) != "v1") return error_response(404, "no such route: " + req.path);
        const auto area = at(1);
        if (area == "health" && seg.size() == 2) {
            if (!get) return error_response(405, "method not allowed");
            std::shared_lock lk(mu_);
            return json_response(200, {{"status", "ok"},
                                       {"last_seq", log_.last_seq()},
                                       {"tweets", state_.tweets.size()},
                                       {"records", state_.records.size()},
                                       {"state_hash", state_.hash()}});
        }
        if (area == "ingest" && seg.size() == 2) {
            if (!post) return error_response(405, "method not allowed");
            return ingest(req);
        }
        if (area == "jobs") {
            if (seg.size() == 2 && get) return list_jobs();
            if (seg.size() == 3 && at(2) == "extract" && post) return submit_extract(req);
            if (seg.size() == 3 && get) return get_job(at(2));
            return error_response(seg.size() <= 3 ? 405 : 404, "unsupported jobs request");
        }
        if (area == "analytics" && seg.size() == 3) {
            if (!get) return error_response(405, "method not allowed");
            return analytics(at(2), req);
        }
        if (area == "alerts" && seg.size() == 2) {  // short path used by the console
            if (!get) return error_response(405, "method not allowed");
            return analytics("alerts", req);
        }
        if (area == "review") {
            if (seg.size() == 2 && get) return list_review(req);
            if (seg.size() == 3 && post) return correct(at(2), req);
            if (seg.size() == 3 && get) return get_review(at(2));
            return error_response(seg.size() <= 3 ? 405 : 404, "unsupported review request");
        }
        return error_response(404, "no such route: " + req.path);
    }

    static Json parse_body(const ServiceRequest& req) {
        if (text::trim_view(req.body).empty()) throw UsageError("request body is empty");
        Json j = Json::parse(req.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw UsageError("request body is not a JSON object");
        return j;
    }

    // -- ingest --------------------------------------------------------------

    ServiceResponse ingest(const ServiceRequest& req) {
        auto body = parse_body(req);
        const bool strict = body.value("strict", false);
        Corpus corpus;
        if (body.contains("path")) {
            if (!body["path"].is_string()) throw UsageError("'path' must be a string");
            corpus = load_tweets(body["path"].get<std::string>(), strict);
        } else if (body.contains("csv")) {
            corpus = parse_tweets(body.at("csv").get<std::string>(), strict);
        } else if (body.contains("records")) {
            if (!body["records"].is_array()) throw UsageError("'records' must be an array");
            std::string doc = csv::format_row({"id", "created_at", "author", "text"});
            for (const auto& r : body["records"]) {
                if (!r.is_object()) throw UsageError("each record must be an object");
                std::vector<std::string> row;
                for (const char* k : {"id", "created_at", "author", "text"}) {
                    const auto& v = r.contains(k) ? r[k] : Json("");
                    if (!v.is_string()) throw UsageError(std::string("record field '") + k + "' must be a string");
                    row.push_back(v.get<std::string>());
                }
                doc += csv::format_row(row);
            }
            corpus = parse_tweets(doc, strict);
        } else {
            throw UsageError("ingest needs one of 'path', 'csv' or 'records'");
        }
        std::unique_lock lk(mu_);
        Json accepted = Json::array();
        std::size_t duplicates = 0;
        for (const auto& t : corpus.records) {
            if (state_.tweets.count(t.id)) ++duplicates;
            else accepted.push_back(to_json(t));
        }
        const auto count = accepted.size();
        if (count) commit_locked({{"type", "ingest"}, {"tweets", std::move(accepted)}, {"skip_count", corpus.skip_count}});
        return json_response(200, {{"count", count},
                                   {"skip_count", corpus.skip_count},
                                   {"duplicates", duplicates},
                                   {"total_tweets", state_.tweets.size()}});
    }

    // -- jobs ----------------------------------------------------------------

    ServiceResponse list_jobs() {
        std::shared_lock lk(mu_);
        Json out = Json::array();
        for (const auto& [_, j] : state_.jobs) out.push_back(to_json(j));
        return json_response(200, {{"jobs", out}});
    }

    ServiceResponse get_job(const std::string& id) {
        std::shared_lock lk(mu_);
        auto it = state_.jobs.find(id);
        if (it == state_.jobs.end()) return error_response(404, "unknown job '" + id + "'");
        return json_response(200, to_json(it->second));
    }

    ServiceResponse submit_extract(const ServiceRequest& req) {
        auto body = req.body.empty() ? Json::object() : parse_body(req);
        const int k = body.value("k", config_.extract_k);
        if (k < 1 || k > 15) throw UsageError("k must be in [1, 15]");
        const bool use_rag = body.value("use_rag", false);
        if (use_rag && !stops_ && !docs_) throw UsageError("use_rag needs 'stops' or 'docs_index' in the service config");
        Json filter = body.value("filter", Json::object());
        if (!filter.is_object()) throw UsageError("'filter' must be an object");
        parse_filter(filter);  // validates
        std::unique_lock lk(mu_);
        std::size_t queued = 0;
        for (const auto& [_, j] : state_.jobs) queued += j.status == JobStatus::queued;
        if (queued >= config_.queue_depth) return error_response(429, "job queue is full");
        Job job;
        job.id = "job-" + std::to_string(state_.next_job);
        job.submitted_at = now_iso();
        job.params = {{"k", k}, {"use_rag", use_rag}, {"filter", filter}};
        commit_locked({{"type", "job_submitted"}, {"job", to_json(job)}, {"next_job", state_.next_job + 1}});
        enqueue(job.id);
        return json_response(202, to_json(state_.jobs.at(job.id)));
    }

    struct Filter {
        std::optional<Timestamp> from, to;
        std::set<std::string> ids;
        bool include_extracted = false;
    };

    static Filter parse_filter(const Json& f) {
        Filter out;
        auto ts = [&](const char* key) -> std::optional<Timestamp> {
            if (!f.contains(key)) return std::nullopt;
            auto t = f[key].is_string() ? parse_iso8601(f[key].get<std::string>()) : std::nullopt;
            if (!t) throw UsageError(std::string("filter.") + key + " must be an ISO-8601 timestamp");
            return t;
        };
        out.from = ts("from");
        out.to = ts("to");
        if (out.from && out.to && !(*out.from < *out.to)) throw UsageError("filter window start must be before its end");
        if (f.contains("ids")) out.ids = f["ids"].get<std::set<std::string>>();
        out.include_extracted = f.value("include_extracted", false);
        return out;
    }

    void enqueue(const std::string& id) {
        {
            std::lock_guard lk(q_mu_);
            queue_.push_back(id);
        }
        q_cv_.notify_all();
    }

    void worker_loop() {
        for (;;) {
            std::string id;
            {
                std::unique_lock lk(q_mu_);
                q_cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
                if (stopping_) return;
                id = queue_.front();
                queue_.pop_front();
                busy_ = true;
            }
            run_job(id);
            {
                std::lock_guard lk(q_mu_);
                busy_ = false;
            }
            idle_cv_.notify_all();
        }
    }

    std::optional<std::string> rag_context(const TweetRecord& t) const {
        std::string ctx;
        try {
            if (stops_) {
                auto hits = retrieve(*stops_, t.text, embedder_, 5);
                ctx += "Official station names that may be relevant:";
                for (const auto& h : hits.hits) ctx += "\n- " + stops_->chunk(h.position).text;
            }
            if (docs_ && docs_->dim() == embedder_.dim()) {
                auto hits = retrieve(*docs_, t.text, embedder_, 3);
                for (const auto& h : hits.hits) ctx += "\n" + docs_->chunk(h.position).text;
            }
        } catch (const DataError&) {
            return std::nullopt;  // nothing embeddable in the tweet
        }
        if (ctx.empty()) return std::nullopt;
        return ctx;
    }

    std::optional<std::string> normalize(const std::string& mention) {
        if (!stops_) return mention;
        return normalize_station(mention, *stops_, embedder_, config_.rerank_stations ? &gateway_ : nullptr).name;
    }

    void run_job(const std::string& id) {
        Job job;
        std::vector<TweetRecord> selected;
        {
            std::shared_lock lk(mu_);
            job = state_.jobs.at(id);
            auto f = parse_filter(job.params.value("filter", Json::object()));
            for (const auto& [tid, t] : state_.tweets) {
                if (!f.ids.empty() && !f.ids.count(tid)) continue;
                if (f.from && t.created_at < *f.from) continue;
                if (f.to && !(t.created_at < *f.to)) continue;
                if (!f.include_extracted && state_.records.count(tid)) continue;
                selected.push_back(t);
            }
        }
        std::stable_sort(selected.begin(), selected.end(),
                         [](const TweetRecord& a, const TweetRecord& b) { return a.created_at < b.created_at; });
        commit({{"type", "job_started"}, {"id", id}, {"total", selected.size()}, {"at", now_iso()}});
        ExtractOptions opt;
        opt.k = job.params.value("k", config_.extract_k);
        opt.workers = config_.extract_workers;
        const bool use_rag = job.params.value("use_rag", false);
        StationNormalizer norm = [this](const std::string& m) { return normalize(m); };
        ContextProvider ctx = [this](const TweetRecord& t) { return rag_context(t); };
        const auto tpl = default_extraction_template();
        std::size_t failures = 0;
        try {
            constexpr std::size_t kChunk = 16;
            for (std::size_t start = 0; start < selected.size(); start += kChunk) {
                {
                    std::lock_guard lk(q_mu_);
                    if (stopping_) return;  // left running; marked interrupted on next start
                }
                std::vector<TweetRecord> chunk(selected.begin() + static_cast<std::ptrdiff_t>(start),
                                               selected.begin() + static_cast<std::ptrdiff_t>(
                                                                      std::min(start + kChunk, selected.size())));
                auto items = extract_batch(chunk, gateway_, tpl, opt, &norm, use_rag ? &ctx : nullptr);
                for (const auto& item : items) {
                    if (item.result) {
                        commit({{"type", "extraction"}, {"job_id", id}, {"result", to_json(*item.result)}});
                    } else {
                        ++failures;
                        commit({{"type", "extraction_error"},
                                {"job_id", id},
                                {"tweet_id", item.tweet_id},
                                {"error", item.error}});
                    }
                }
            }
            const bool all_failed = !selected.empty() && failures == selected.size();
            Json fin{{"type", "job_finished"}, {"id", id}, {"status", all_failed ? "failed" : "done"}, {"at", now_iso()}};
            if (all_failed) fin["error"] = "every tweet failed extraction";
            commit(std::move(fin));
        } catch (const std::exception& e) {
            commit({{"type", "job_finished"}, {"id", id}, {"status", "failed"}, {"error", e.what()}, {"at", now_iso()}});
        }
    }

    // -- analytics -----------------------------------------------------------

    static std::optional<Timestamp> query_time(const ServiceRequest& req, const char* key) {
        auto it = req.query.find(key);
        if (it == req.query.end() || it->second.empty()) return std::nullopt;
        auto t = parse_iso8601(it->second);
        if (!t) throw UsageError(std::string("'") + key + "' must be an ISO-8601 timestamp");
        return t;
    }

    static std::size_t query_size(const ServiceRequest& req, const char* key, std::size_t fallback) {
        auto it = req.query.find(key);
        if (it == req.query.end() || it->second.empty()) return fallback;
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
        if (ec != std::errc() || p != it->second.data() + it->second.size())
            throw UsageError(std::string("'") + key + "' must be a non-negative integer");
        return v;
    }

    /// Requested window; missing ends default to the span of the data.
    static TimeWindow query_window(const ServiceRequest& req, const std::vector<ConsensusResult>& records) {
        auto from = query_time(req, "from");
        auto to = query_time(req, "to");
        if (!from || !to) {
            auto span = data_span(records);
            if (!from) from = span.from;
            if (!to) to = span.to;
        }
        TimeWindow w{*from, *to};
        if (!w.valid()) throw UsageError("window start must be before its end");
        return w;
    }

    static std::vector<ConsensusResult> in_window(const std::vector<ConsensusResult>& rs, const TimeWindow& w) {
        std::vector<ConsensusResult> out;
        for (const auto& r : rs)
            if (w.contains(r.created_at)) out.push_back(r);
        return out;
    }

    ServiceResponse analytics(const std::string& what, const ServiceRequest& req) {
        std::vector<ConsensusResult> records;
        {
            std::shared_lock lk(mu_);
            records = state_.record_list();
        }
        const auto window = query_window(req, records);
        if (what == "hourly") return json_response(200, to_json(hourly_volume(records, window)));
        if (what == "stations")
            return json_response(200, to_json(station_mention_counts(records, window, query_size(req, "top_n", config_.top_n))));
        if (what == "matrix") {
            auto j = to_json(sentiment_sarcasm_matrix(in_window(records, window)));
            j["from"] = format_iso8601(window.from);
            j["to"] = format_iso8601(window.to);
            return json_response(200, j);
        }
        if (what == "keywords") {
            auto it = req.query.find("category");
            auto cat = category_filter_from_string(it == req.query.end() ? "all" : it->second);
            auto k = keyword_summary(in_window(records, window), cat, stopwords_, query_size(req, "top_n", 20));
            if (auto f = req.query.find("format"); f != req.query.end() && f->second == "csv")
                return {200, "text/csv", to_csv(k)};
            return json_response(200, to_json(k));
        }
        if (what == "alerts") {
            auto series = station_mention_counts(records, window, 0);
            TimeWindow history{window.from - std::chrono::hours(config_.baseline_hours), window.from};
            auto alerts = detect_spikes(series, estimate_baseline(records, history), config_.spikes);
            return json_response(200, {{"from", format_iso8601(window.from)},
                                       {"to", format_iso8601(window.to)},
                                       {"baseline_hours", config_.baseline_hours},
                                       {"z_threshold", config_.spikes.z_threshold},
                                       {"min_count", config_.spikes.min_count},
                                       {"alerts", to_json(alerts)}});
        }
        if (what == "drilldown") {
            auto st = req.query.find("station");
            if (st == req.query.end() || st->second.empty()) throw UsageError("'station' is required");
            std::optional<Sentiment> sentiment;
            if (auto s = req.query.find("sentiment"); s != req.query.end() && !s->second.empty()) {
                sentiment = sentiment_from_string(s->second);
                if (!sentiment) throw UsageError("unknown sentiment '" + s->second + "'");
            }
            Json out = Json::array();
            for (const auto& r : drill_down(records, st->second, window, sentiment)) out.push_back(to_json(r));
            return json_response(200, {{"station", st->second},
                                       {"from", format_iso8601(window.from)},
                                       {"to", format_iso8601(window.to)},
                                       {"records", out}});
        }
        return error_response(404, "unknown analytics view '" + what + "'");
    }

    // -- review --------------------------------------------------------------

    Json review_json(const ReviewItem& item) const {
        Json low = Json::array(), pend = Json::array();
        for (auto f : item.low_agreement_fields) low.push_back(to_string(f));
        for (auto f : item.pending_fields) pend.push_back(to_string(f));
        const auto& rec = state_.records.at(item.tweet_id);
        return {{"tweet_id", item.tweet_id},
                {"status", to_string(item.status)},
                {"low_agreement_fields", low},
                {"pending_fields", pend},
                {"record", to_json(rec)},
                {"history", item.history}};
    }

    ServiceResponse list_review(const ServiceRequest& req) {
        auto it = req.query.find("status");
        const std::string want = it == req.query.end() || it->second.empty() ? "pending" : it->second;
        std::optional<ReviewStatus> status;
        if (want != "all") {
            status = review_status_from_string(want);
            if (!status) throw UsageError("status must be pending, corrected, confirmed or all");
        }
        std::shared_lock lk(mu_);
        Json items = Json::array();
        for (const auto& [_, item] : state_.review)
            if (!status || item.status == *status) items.push_back(review_json(item));
        return json_response(200, {{"items", items}});
    }

    ServiceResponse get_review(const std::string& id) {
        std::shared_lock lk(mu_);
        auto it = state_.review.find(id);
        if (it == state_.review.end()) return error_response(404, "no review item for '" + id + "'");
        return json_response(200, review_json(it->second));
    }

    ServiceResponse correct(const std::string& id, const ServiceRequest& req) {
        auto body = parse_body(req);
        if (!body.contains("field") || !body["field"].is_string()) throw UsageError("'field' is required");
        if (!body.contains("value")) throw UsageError("'value' is required");
        const auto field = field_from_string(body["field"].get<std::string>());
        if (!field) throw UsageError("unknown field '" + body["field"].get<std::string>() + "'");
        const auto reviewer = body.value("reviewer", std::string("anonymous"));

        std::unique_lock lk(mu_);
        if (!state_.records.count(id)) return error_response(404, "no extracted record for '" + id + "'");
        auto it = state_.review.find(id);
        if (it == state_.review.end() || it->second.status != ReviewStatus::pending ||
            !it->second.pending_fields.count(*field))
            return error_response(409, "review item '" + id + "' is not pending for " + std::string(to_string(*field)));

        std::optional<std::string> canonical;
        if (*field == Field::station && body["value"].is_string() && clean_station(body["value"].get<std::string>())) {
            auto mention = *clean_station(body["value"].get<std::string>());
            if (stops_) {
                for (const auto& c : stop_names_)
                    if (text::iequals(c.text, mention)) canonical = c.text;
                if (!canonical) return error_response(422, "'" + mention + "' is not a known stop name");
            } else {
                canonical = mention;
            }
        }
        auto probe = state_.records.at(id).record;
        if (!set_verified_field(probe, *field, body["value"], canonical))
            return error_response(422, "value " + body["value"].dump() + " is not valid for " +
                                           std::string(to_string(*field)));
        Json ev{{"type", "correction"},
                {"tweet_id", id},
                {"field", to_string(*field)},
                {"value", body["value"]},
                {"reviewer", reviewer},
                {"at", now_iso()}};
        if (canonical) ev["canonical"] = *canonical;
        commit_locked(std::move(ev));
        return json_response(200, review_json(state_.review.at(id)));
    }

    ServiceConfig config_;
    EventLog log_;
    Gateway gateway_;
    ServiceState state_;
    ReplayReport recovery_;
    mutable std::shared_mutex mu_;

    FallbackEmbedder embedder_;
    std::vector<DocumentChunk> stop_names_;
    std::unique_ptr<VectorIndex> stops_;
    std::unique_ptr<VectorIndex> docs_;
    std::set<std::string> stopwords_;
    std::function<Timestamp()> clock_;

    std::mutex q_mu_;
    std::condition_variable q_cv_;
    std::condition_variable idle_cv_;
    std::deque<std::string> queue_;
    bool stopping_ = false;
    bool busy_ = false;
    std::thread worker_;
};

}  // namespace tpulse
