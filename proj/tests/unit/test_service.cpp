#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <mutex>

#include "test_util.hpp"
#include "tpulse/service.hpp"

using namespace tpulse;
using tpulse::testing::TempDir;

namespace {

// Tweets whose text contains "[mixed]" get a different sentiment and sarcasm
// on every sample, so their consensus falls below the review threshold.
std::shared_ptr<FunctionTransport> review_transport() {
    auto mu = std::make_shared<std::mutex>();
    auto calls = std::make_shared<std::map<std::string, int>>();
    return std::make_shared<FunctionTransport>([mu, calls](const CompletionRequest& r) {
        const auto user = r.last_user_content();
        int n;
        {
            std::lock_guard lk(*mu);
            n = (*calls)[user]++;
        }
        const bool mixed = user.find("[mixed]") != std::string::npos;
        static const char* rot[] = {"positive", "negative", "neutral"};
        Json j{{"station", "Union"},
               {"sentiment", mixed ? rot[n % 3] : "negative"},
               {"sarcasm", mixed ? n % 2 == 0 : false},
               {"problem_topic", "travel_time"},
               {"problem_summary", "train delayed"}};
        return TransportReply{TransportReply::Status::ok, j.dump(), 200, {}};
    });
}

ServiceConfig test_config(const TempDir& dir) {
    ServiceConfig c;
    c.data_dir = (dir.path() / "data").string();
    c.fsync = false;
    c.gateway.max_retries = 0;
    c.extract_workers = 2;
    return c;
}

ServiceRequest get(std::string path, std::map<std::string, std::string> q = {}) {
    return {"GET", std::move(path), std::move(q), ""};
}
ServiceRequest post(std::string path, const Json& body) { return {"POST", std::move(path), {}, body.dump()}; }

Json tweet(const std::string& id, const std::string& at, const std::string& text) {
    return {{"id", id}, {"created_at", at}, {"author", "rider"}, {"text", text}};
}

// n tweets an hour apart starting 2024-05-01T08:00Z; every third one is mixed
Json tweets(std::size_t n, std::size_t first = 0) {
    Json arr = Json::array();
    for (std::size_t i = first; i < first + n; ++i) {
        char at[32];
        std::snprintf(at, sizeof at, "2024-05-%02zuT%02zu:10:00Z", 1 + i / 24, i % 24);
        arr.push_back(tweet("w" + std::to_string(1000 + i), at,
                            "delay at union " + std::string(i % 3 == 0 ? "[mixed]" : "") + " #" + std::to_string(i)));
    }
    return arr;
}

void run_extract(Service& s, const Json& body = Json::object()) {
    auto r = s.handle(post("/v1/jobs/extract", body));
    ASSERT_EQ(r.status, 202) << r.body;
    s.wait_idle();
    auto j = s.handle(get("/v1/jobs/" + r.json()["id"].get<std::string>())).json();
    ASSERT_EQ(j["status"], "done") << j.dump();
}

}  // namespace

TEST(Service, FreshDirectoryStartsEmpty) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    EXPECT_EQ(s.recovery().applied, 0u);
    EXPECT_FALSE(s.recovery().corrupt_offset);
    auto h = s.handle(get("/v1/health")).json();
    EXPECT_EQ(h["tweets"], 0);
    EXPECT_EQ(h["last_seq"], 0);
}

TEST(Service, IngestCountsAndDuplicates) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    auto r = s.handle(post("/v1/ingest", {{"records", tweets(5)}}));
    ASSERT_EQ(r.status, 200) << r.body;
    EXPECT_EQ(r.json()["count"], 5);
    r = s.handle(post("/v1/ingest", {{"records", tweets(7)}}));
    EXPECT_EQ(r.json()["count"], 2);
    EXPECT_EQ(r.json()["duplicates"], 5);
    EXPECT_EQ(r.json()["total_tweets"], 7);

    auto csv = s.handle(post("/v1/ingest", {{"csv", "id,created_at,author,text\nc1,2024-05-03T01:00:00Z,a,hello\n"}}));
    EXPECT_EQ(csv.json()["count"], 1);
}

TEST(Service, IngestRejectsMalformedPayloads) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    EXPECT_EQ(s.handle({"POST", "/v1/ingest", {}, "{not json"}).status, 400);
    EXPECT_EQ(s.handle({"POST", "/v1/ingest", {}, ""}).status, 400);
    EXPECT_EQ(s.handle(post("/v1/ingest", {{"nothing", 1}})).status, 400);
    EXPECT_EQ(s.handle(post("/v1/ingest", {{"records", "x"}})).status, 400);
    EXPECT_EQ(s.handle(post("/v1/ingest", {{"records", {{{"id", 3}}}}})).status, 400);
    EXPECT_EQ(s.handle(post("/v1/ingest", {{"path", (dir.path() / "missing.csv").string()}})).status, 400);
    // strict mode turns a bad row into an error instead of a skip
    Json bad = tweets(2);
    bad[1]["created_at"] = "yesterday";
    EXPECT_EQ(s.handle(post("/v1/ingest", {{"records", bad}, {"strict", true}})).status, 400);
    auto lenient = s.handle(post("/v1/ingest", {{"records", bad}}));
    EXPECT_EQ(lenient.status, 200);
    EXPECT_EQ(lenient.json()["skip_count"], 1);
}

TEST(Service, RoutingErrors) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    EXPECT_EQ(s.handle(get("/v1/nowhere")).status, 404);
    EXPECT_EQ(s.handle(get("/elsewhere")).status, 404);
    EXPECT_EQ(s.handle(get("/v1/jobs/job-99")).status, 404);
    EXPECT_EQ(s.handle(get("/v1/ingest")).status, 405);
    EXPECT_EQ(s.handle(get("/v1/analytics/hourly", {{"from", "2024-05-02T00:00:00Z"}, {"to", "2024-05-01T00:00:00Z"}}))
                  .status,
              400);
    EXPECT_EQ(s.handle(get("/v1/analytics/hourly", {{"from", "soon"}})).status, 400);
    EXPECT_EQ(s.handle(get("/v1/analytics/stations", {{"top_n", "-1"}})).status, 400);
    EXPECT_EQ(s.handle(get("/v1/analytics/keywords", {{"category", "weather"}})).status, 400);
    EXPECT_EQ(s.handle(get("/v1/analytics/drilldown")).status, 400);
    EXPECT_EQ(s.handle(get("/v1/review", {{"status", "lost"}})).status, 400);
    EXPECT_EQ(s.handle(post("/v1/jobs/extract", {{"k", 0}})).status, 400);
    EXPECT_EQ(s.handle(post("/v1/jobs/extract", {{"use_rag", true}})).status, 400);
}

TEST(Service, ExtractJobLifecycle) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    s.handle(post("/v1/ingest", {{"records", tweets(6)}}));
    s.start();
    auto r = s.handle(post("/v1/jobs/extract", Json::object()));
    ASSERT_EQ(r.status, 202);
    EXPECT_EQ(r.json()["id"], "job-1");
    s.wait_idle();
    auto job = s.handle(get("/v1/jobs/job-1")).json();
    EXPECT_EQ(job["status"], "done");
    EXPECT_EQ(job["progress"]["completed"], 6);
    EXPECT_EQ(job["progress"]["total"], 6);
    EXPECT_EQ(s.handle(get("/v1/health")).json()["records"], 6);

    // already-extracted tweets are skipped unless asked for
    run_extract(s);
    EXPECT_EQ(s.handle(get("/v1/jobs/job-2")).json()["progress"]["total"], 0);
    EXPECT_EQ(s.handle(get("/v1/jobs")).json()["jobs"].size(), 2u);
}

TEST(Service, QueueFullIs429) {
    TempDir dir;
    auto cfg = test_config(dir);
    cfg.queue_depth = 2;
    Service s(cfg, review_transport());  // worker not started, so jobs stay queued
    EXPECT_EQ(s.handle(post("/v1/jobs/extract", Json::object())).status, 202);
    EXPECT_EQ(s.handle(post("/v1/jobs/extract", Json::object())).status, 202);
    EXPECT_EQ(s.handle(post("/v1/jobs/extract", Json::object())).status, 429);
}

TEST(Service, QueuedJobSurvivesRestart) {
    TempDir dir;
    auto cfg = test_config(dir);
    {
        Service s(cfg, review_transport());
        s.handle(post("/v1/ingest", {{"records", tweets(4)}}));
        EXPECT_EQ(s.handle(post("/v1/jobs/extract", Json::object())).status, 202);
    }
    Service s(cfg, review_transport());
    EXPECT_EQ(s.handle(get("/v1/jobs/job-1")).json()["status"], "queued");
    s.start();
    s.wait_idle();
    EXPECT_EQ(s.handle(get("/v1/jobs/job-1")).json()["status"], "done");
    EXPECT_EQ(s.handle(get("/v1/health")).json()["records"], 4);
}

TEST(Service, RunningJobFromDeadProcessIsMarkedFailed) {
    TempDir dir;
    auto cfg = test_config(dir);
    {
        EventLog log(cfg.data_dir, false);
        log.replay(0, [](const Json&) {});
        Json a{{"type", "job_submitted"},
               {"job", {{"id", "job-1"}, {"status", "queued"}, {"submitted_at", "2024-05-01T00:00:00Z"}}},
               {"next_job", 2}};
        Json b{{"type", "job_started"}, {"id", "job-1"}, {"total", 3}, {"at", "2024-05-01T00:00:01Z"}};
        log.append(a);
        log.append(b);
    }
    Service s(cfg, review_transport());
    EXPECT_EQ(s.handle(get("/v1/jobs/job-1")).json()["status"], "running");
    s.start();
    auto j = s.handle(get("/v1/jobs/job-1")).json();
    EXPECT_EQ(j["status"], "failed");
    EXPECT_EQ(j["error"], "interrupted by restart");
    EXPECT_EQ(s.handle(post("/v1/jobs/extract", Json::object())).json()["id"], "job-2");
}

TEST(Service, AllTweetsFailingFailsTheJob) {
    TempDir dir;
    auto down = std::make_shared<FunctionTransport>([](const CompletionRequest&) {
        return TransportReply{TransportReply::Status::connection_error, "", 0, "refused"};
    });
    Service s(test_config(dir), down);
    s.handle(post("/v1/ingest", {{"records", tweets(2)}}));
    s.start();
    s.handle(post("/v1/jobs/extract", Json::object()));
    s.wait_idle();
    auto j = s.handle(get("/v1/jobs/job-1")).json();
    EXPECT_EQ(j["status"], "failed");
    EXPECT_EQ(j["failed_items"], 2);
    EXPECT_EQ(s.handle(get("/v1/health")).json()["records"], 0);
}

TEST(Service, ReviewQueueHoldsLowAgreementOnly) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    s.handle(post("/v1/ingest", {{"records", tweets(9)}}));
    s.start();
    run_extract(s);
    auto items = s.handle(get("/v1/review")).json()["items"];
    ASSERT_EQ(items.size(), 3u);  // w1000, w1003, w1006
    for (const auto& it : items) {
        const auto id = std::stoi(it["tweet_id"].get<std::string>().substr(1)) - 1000;
        EXPECT_EQ(id % 3, 0);
        EXPECT_EQ(it["status"], "pending");
        EXPECT_TRUE(std::find(it["pending_fields"].begin(), it["pending_fields"].end(), "sentiment") !=
                    it["pending_fields"].end());
    }
    EXPECT_EQ(s.handle(get("/v1/review", {{"status", "all"}})).json()["items"].size(), 3u);
    EXPECT_EQ(s.handle(get("/v1/review/w1000")).status, 200);
    EXPECT_EQ(s.handle(get("/v1/review/w1001")).status, 404);
}

TEST(Service, CorrectionStatusCodes) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    s.handle(post("/v1/ingest", {{"records", tweets(3)}}));
    s.start();
    run_extract(s);
    EXPECT_EQ(s.handle(post("/v1/review/w9999", {{"field", "sentiment"}, {"value", "neutral"}})).status, 404);
    EXPECT_EQ(s.handle(post("/v1/review/w1001", {{"field", "sentiment"}, {"value", "neutral"}})).status, 409);
    EXPECT_EQ(s.handle(post("/v1/review/w1000", {{"field", "problem_topic"}, {"value", "safety_and_security"}})).status,
              409);  // topic had full agreement
    EXPECT_EQ(s.handle(post("/v1/review/w1000", {{"field", "sentiment"}, {"value", "angry"}})).status, 422);
    EXPECT_EQ(s.handle(post("/v1/review/w1000", {{"field", "sentiment"}, {"value", 3}})).status, 422);
    EXPECT_EQ(s.handle(post("/v1/review/w1000", {{"field", "mood"}, {"value", "neutral"}})).status, 400);
    EXPECT_EQ(s.handle(post("/v1/review/w1000", {{"value", "neutral"}})).status, 400);
    EXPECT_EQ(s.handle({"POST", "/v1/review/w1000", {}, "[]"}).status, 400);

    auto ok = s.handle(post("/v1/review/w1000", {{"field", "sentiment"}, {"value", "neutral"}, {"reviewer", "ana"}}));
    ASSERT_EQ(ok.status, 200) << ok.body;
    auto j = ok.json();
    EXPECT_EQ(j["record"]["sentiment"], "neutral");
    EXPECT_EQ(j["history"][0]["reviewer"], "ana");
    EXPECT_EQ(s.handle(post("/v1/review/w1000", {{"field", "sentiment"}, {"value", "positive"}})).status, 409);
}

TEST(Service, CorrectionCompletesItemAndMatrixReadsIt) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    s.handle(post("/v1/ingest", {{"records", tweets(1)}}));
    s.start();
    run_extract(s);
    auto item = s.handle(get("/v1/review/w1000")).json();
    const auto before = s.handle(get("/v1/analytics/matrix")).json();
    for (const auto& f : item["pending_fields"]) {
        // the sentiment vote was a three-way tie won by "positive"; pick a different value
        Json value = f == "sentiment" ? Json("neutral") : f == "sarcasm" ? Json(true) : Json(nullptr);
        if (f == "station") value = "Union";
        ASSERT_EQ(s.handle(post("/v1/review/w1000", {{"field", f}, {"value", value}})).status, 200) << f;
    }
    auto done = s.handle(get("/v1/review/w1000")).json();
    EXPECT_EQ(done["status"], "corrected");
    EXPECT_TRUE(done["pending_fields"].empty());
    EXPECT_EQ(s.handle(get("/v1/review")).json()["items"].size(), 0u);

    // the very next read reflects the correction
    auto m = s.handle(get("/v1/analytics/matrix")).json();
    EXPECT_EQ(m["total"], 1);
    EXPECT_EQ(m["cells"]["neutral"]["sarcastic"], 1);
    EXPECT_EQ(before["cells"]["positive"]["sarcastic"], 1);
    EXPECT_EQ(before["total"], 1);
}

TEST(Service, HumanVerifiedFieldsSurviveReextraction) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    s.handle(post("/v1/ingest", {{"records", tweets(1)}}));
    s.start();
    run_extract(s);
    ASSERT_EQ(s.handle(post("/v1/review/w1000", {{"field", "sentiment"}, {"value", "neutral"}})).status, 200);
    for (int round = 0; round < 4; ++round) {
        run_extract(s, {{"filter", {{"include_extracted", true}}}});
        auto rec = s.state_json()["records"]["w1000"];
        EXPECT_EQ(rec["sentiment"], "neutral") << round;
        EXPECT_TRUE(rec["field_flags"]["sentiment"]["human_verified"].get<bool>()) << rec.dump();
    }
    // sentiment is no longer pending after re-extraction
    auto item = s.handle(get("/v1/review/w1000")).json();
    for (const auto& f : item["pending_fields"]) EXPECT_NE(f, "sentiment");
}

TEST(Service, StationCorrectionChecksStopNames) {
    TempDir dir;
    auto cfg = test_config(dir);
    cfg.stops_path = std::string(TPULSE_TEST_DATA_DIR) + "/stops.txt";
    auto transport = std::make_shared<FunctionTransport>([calls = std::make_shared<std::atomic<int>>(0)](
                                                             const CompletionRequest&) {
        static const char* st[] = {"union stn", "kennedy", "finch"};
        Json j{{"station", st[(*calls)++ % 3]},
               {"sentiment", "negative"},
               {"sarcasm", false},
               {"problem_topic", "travel_time"},
               {"problem_summary", "late"}};
        return TransportReply{TransportReply::Status::ok, j.dump(), 200, {}};
    });
    cfg.extract_workers = 1;
    Service s(cfg, transport);
    s.handle(post("/v1/ingest", {{"records", tweets(1)}}));
    s.start();
    run_extract(s);
    EXPECT_EQ(s.handle(post("/v1/review/w1000", {{"field", "station"}, {"value", "Atlantis Station"}})).status, 422);
    auto ok = s.handle(post("/v1/review/w1000", {{"field", "station"}, {"value", "kennedy station"}}));
    ASSERT_EQ(ok.status, 200) << ok.body;
    EXPECT_EQ(ok.json()["record"]["station_canonical"], "Kennedy Station");
}

TEST(Service, RestartReproducesStateHash) {
    TempDir dir;
    auto cfg = test_config(dir);
    std::string hash;
    {
        Service s(cfg, review_transport());
        for (std::size_t i = 0; i < 75; ++i) s.handle(post("/v1/ingest", {{"records", tweets(1, i * 3)}}));
        s.start();
        run_extract(s, {{"filter", {{"to", "2024-05-02T05:00:00Z"}}}});  // 10 mixed tweets: 13 events
        auto pending = s.handle(get("/v1/review")).json()["items"];
        ASSERT_EQ(pending.size(), 10u);
        for (const auto& it : pending)
            ASSERT_EQ(s.handle(post("/v1/review/" + it["tweet_id"].get<std::string>(),
                                    {{"field", "sentiment"}, {"value", "neutral"}}))
                          .status,
                      200);
        s.handle(post("/v1/ingest", {{"records", tweets(2, 500)}}));
        s.handle(post("/v1/ingest", {{"records", tweets(1, 600)}}));
        EXPECT_EQ(s.handle(get("/v1/health")).json()["last_seq"], 100);
        hash = s.state_hash();
    }
    Service s(cfg, review_transport());
    EXPECT_EQ(s.recovery().applied, 100u);
    EXPECT_FALSE(s.recovery().corrupt_offset);
    EXPECT_EQ(s.state_hash(), hash);
}

TEST(Service, TruncatedFinalLineRecoversPrefix) {
    TempDir dir;
    auto cfg = test_config(dir);
    {
        Service s(cfg, review_transport());
        for (std::size_t i = 0; i < 100; ++i) s.handle(post("/v1/ingest", {{"records", tweets(1, i)}}));
    }
    const auto path = std::filesystem::path(cfg.data_dir) / "events.ndjson";
    std::string doc;
    {
        std::ifstream in(path, std::ios::binary);
        doc.assign(std::istreambuf_iterator<char>(in), {});
    }
    // independent replay of the first 99 lines
    ServiceState expected;
    std::size_t pos = 0;
    for (int i = 0; i < 99; ++i) {
        auto nl = doc.find('\n', pos);
        expected.apply(Json::parse(doc.substr(pos, nl - pos)));
        pos = nl + 1;
    }
    // simulate a crash in the middle of writing event 100
    std::filesystem::resize_file(path, pos + (doc.size() - pos) / 2);

    Service s(cfg, review_transport());
    EXPECT_EQ(s.recovery().applied, 99u);
    ASSERT_TRUE(s.recovery().corrupt_offset);
    EXPECT_EQ(*s.recovery().corrupt_offset, pos);
    EXPECT_EQ(s.state_hash(), expected.hash());
    EXPECT_EQ(std::filesystem::file_size(path), pos);
    // appends continue the sequence cleanly
    s.handle(post("/v1/ingest", {{"records", tweets(1, 700)}}));
    EXPECT_EQ(s.handle(get("/v1/health")).json()["last_seq"], 100);
}

TEST(Service, SnapshotPlusTailReplay) {
    TempDir dir;
    auto cfg = test_config(dir);
    cfg.snapshot_every = 10;
    std::string hash;
    {
        Service s(cfg, review_transport());
        for (std::size_t i = 0; i < 25; ++i) s.handle(post("/v1/ingest", {{"records", tweets(1, i)}}));
        hash = s.state_hash();
    }
    Service s(cfg, review_transport());
    EXPECT_EQ(s.recovery().snapshot_seq, 20u);
    EXPECT_EQ(s.recovery().applied, 5u);
    EXPECT_EQ(s.state_hash(), hash);
}

TEST(Service, AnalyticsEndpoints) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    s.handle(post("/v1/ingest", {{"records", tweets(30)}}));
    s.start();
    run_extract(s);
    auto hourly = s.handle(get("/v1/analytics/hourly")).json();
    std::size_t sum = 0;
    for (const auto& h : hourly["hours"]) sum += h["count"].get<std::size_t>();
    EXPECT_EQ(sum, 30u);
    auto st = s.handle(get("/v1/analytics/stations")).json();
    ASSERT_EQ(st["stations"].size(), 1u);
    EXPECT_EQ(st["stations"][0]["station"], "Union");
    auto kw = s.handle(get("/v1/analytics/keywords", {{"category", "travel_time"}, {"top_n", "2"}})).json();
    ASSERT_EQ(kw["terms"].size(), 2u);
    EXPECT_EQ(kw["terms"][0]["term"], "delayed");  // tie with "train", broken alphabetically
    EXPECT_EQ(kw["terms"][1]["count"], 30);
    auto csv = s.handle(get("/v1/analytics/keywords", {{"format", "csv"}}));
    EXPECT_EQ(csv.content_type, "text/csv");
    EXPECT_EQ(csv.body.rfind("term,count\n", 0), 0u);
    auto drill = s.handle(get("/v1/analytics/drilldown", {{"station", "Union"}})).json();
    EXPECT_EQ(drill["records"].size(), 30u);
    auto a1 = s.handle(get("/v1/analytics/alerts"));
    auto a2 = s.handle(get("/v1/alerts"));
    EXPECT_EQ(a1.status, 200);
    EXPECT_EQ(a1.body, a2.body);
}

TEST(Service, CorrectionMatchingTheVoteConfirms) {
    TempDir dir;
    Service s(test_config(dir), review_transport());
    s.handle(post("/v1/ingest", {{"records", tweets(1)}}));
    s.start();
    run_extract(s);
    auto item = s.handle(get("/v1/review/w1000")).json();
    ASSERT_EQ(item["pending_fields"], Json::array({"sentiment"}));
    ASSERT_EQ(s.handle(post("/v1/review/w1000", {{"field", "sentiment"}, {"value", "positive"}})).status, 200);
    EXPECT_EQ(s.handle(get("/v1/review/w1000")).json()["status"], "confirmed");
    EXPECT_EQ(s.handle(get("/v1/review", {{"status", "confirmed"}})).json()["items"].size(), 1u);
}
