// tpulse: command-line entry point.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 upstream (LLM or embedding endpoint).
// Machine-readable output goes to stdout; progress and summaries to stderr.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "tpulse/analytics.hpp"
#include "tpulse/corpus.hpp"
#include "tpulse/extraction.hpp"
#include "tpulse/gtfs.hpp"
#include "tpulse/http_transport.hpp"
#include "tpulse/model_file.hpp"
#include "tpulse/rag.hpp"
#include "tpulse/remote_embedder.hpp"
#include "tpulse/service.hpp"
#include "tpulse/service_http.hpp"

namespace fs = std::filesystem;
using namespace tpulse;

namespace {

void log(const std::string& msg) { std::cerr << "tpulse: " << msg << "\n"; }

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
    if (!out) throw DataError("cannot write '" + p.string() + "'");
}

// -- gateway flags shared by every command that calls a model --------------

struct GatewayFlags {
    std::string config_path;
    std::string endpoint;
    std::string model_id;
    std::string mock_script;
    int timeout_ms = 0;
    int retries = -1;
    int concurrency = 0;

    void add(CLI::App* cmd) {
        cmd->add_option("--gateway-config", config_path, "JSON file with gateway settings")->check(CLI::ExistingFile);
        cmd->add_option("--endpoint", endpoint, "chat completion URL");
        cmd->add_option("--model-id", model_id, "model identifier sent with each request");
        cmd->add_option("--timeout-ms", timeout_ms, "per-request timeout");
        cmd->add_option("--retries", retries, "retries on transient failures");
        cmd->add_option("--concurrency", concurrency, "maximum requests in flight");
        cmd->add_option("--mock-script", mock_script, "replay replies from this JSON script instead of calling HTTP")
            ->check(CLI::ExistingFile);
    }

    GatewayConfig resolve(GatewayConfig base = {}) const {
        if (!config_path.empty()) base = gateway_config_from_json(read_json_file(config_path));
        if (!endpoint.empty()) base.base_url = endpoint;
        if (!model_id.empty()) base.model_id = model_id;
        if (timeout_ms > 0) base.timeout_ms = timeout_ms;
        if (retries >= 0) base.max_retries = retries;
        if (concurrency > 0) base.max_in_flight = concurrency;
        base.validate();
        return base;
    }

    Gateway gateway() const { return make_gateway(resolve(), mock_script); }
};

// -- extraction records for analyze/report -----------------------------------

struct RecordSource {
    std::string records_path;
    std::string data_dir;

    void add(CLI::App* cmd) {
        auto* r = cmd->add_option("--records", records_path, "NDJSON written by `tpulse extract`")
                      ->check(CLI::ExistingFile);
        auto* d = cmd->add_option("--data-dir", data_dir, "service data directory to read instead")
                      ->check(CLI::ExistingDirectory);
        r->excludes(d);
    }

    std::vector<ConsensusResult> load() const {
        std::vector<ConsensusResult> out;
        if (!data_dir.empty()) {
            // read-only: replays without cutting a corrupt tail
            EventLog elog(data_dir, false);
            ServiceState state;
            std::uint64_t after = 0;
            if (auto snap = elog.load_snapshot()) {
                state = ServiceState::from_json((*snap)["state"]);
                after = (*snap)["seq"].get<std::uint64_t>();
            }
            std::ifstream in(fs::path(data_dir) / "events.ndjson", std::ios::binary);
            std::string doc((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            std::size_t pos = 0, lineno = 0;
            while (pos < doc.size()) {
                ++lineno;
                auto nl = doc.find('\n', pos);
                if (nl == std::string::npos) {
                    log("ignoring unterminated final event line " + std::to_string(lineno));
                    break;
                }
                Json ev = Json::parse(doc.substr(pos, nl - pos), nullptr, false);
                pos = nl + 1;
                if (ev.is_discarded() || !ev.contains("seq")) {
                    log("events.ndjson line " + std::to_string(lineno) + " is corrupt; stopping there");
                    break;
                }
                if (ev["seq"].get<std::uint64_t>() > after) state.apply(ev);
            }
            return state.record_list();
        }
        if (records_path.empty()) throw UsageError("one of --records or --data-dir is required");
        std::ifstream in(records_path, std::ios::binary);
        if (!in) throw DataError("cannot read '" + records_path + "'");
        std::string line;
        std::size_t lineno = 0, errors = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (text::trim_view(line).empty()) continue;
            Json j = Json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                throw DataError(records_path + ": line " + std::to_string(lineno) + ": not a JSON object");
            if (j.contains("error")) {
                ++errors;
                continue;
            }
            try {
                out.push_back(consensus_from_json(j));
            } catch (const std::exception& e) {
                throw DataError(records_path + ": line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        if (errors) log("skipped " + std::to_string(errors) + " failed extraction lines");
        return out;
    }
};

struct WindowFlags {
    std::string from, to;

    void add(CLI::App* cmd) {
        cmd->add_option("--from", from, "window start, ISO-8601 (default: first record's hour)");
        cmd->add_option("--to", to, "window end, exclusive (default: hour after the last record)");
    }

    TimeWindow resolve(const std::vector<ConsensusResult>& records) const {
        auto span = data_span(records);
        TimeWindow w = span;
        if (!from.empty()) {
            auto t = parse_iso8601(from);
            if (!t) throw UsageError("--from: not an ISO-8601 timestamp: " + from);
            w.from = *t;
        }
        if (!to.empty()) {
            auto t = parse_iso8601(to);
            if (!t) throw UsageError("--to: not an ISO-8601 timestamp: " + to);
            w.to = *t;
        }
        if (!w.valid()) throw UsageError("window start must be before its end");
        return w;
    }
};

struct AnalyticsFlags {
    std::size_t top_n = 5;
    std::size_t keyword_top_n = 20;
    std::string category = "all";
    std::string stopwords_path;
    int baseline_hours = 168;
    double z = 3.0;
    std::size_t min_count = 5;

    void add(CLI::App* cmd) {
        cmd->add_option("--top-n", top_n, "stations to keep (0 keeps all)")->capture_default_str();
        cmd->add_option("--keywords", keyword_top_n, "keywords to list")->capture_default_str();
        cmd->add_option("--category", category, "topic filter for keywords: all, none or a topic")->capture_default_str();
        cmd->add_option("--stopwords", stopwords_path, "stop-word file (default: built-in list)")
            ->check(CLI::ExistingFile);
        cmd->add_option("--baseline-hours", baseline_hours, "history before the window used as baseline")
            ->capture_default_str();
        cmd->add_option("--z", z, "alert z-score threshold")->capture_default_str();
        cmd->add_option("--min-count", min_count, "minimum mentions in an hour to alert")->capture_default_str();
    }

    std::set<std::string> stopwords() const {
        return stopwords_path.empty() ? default_stopwords() : load_stopwords(stopwords_path);
    }

    std::vector<SpikeAlert> alerts(const std::vector<ConsensusResult>& records, const TimeWindow& w) const {
        if (baseline_hours < 1) throw UsageError("--baseline-hours must be >= 1");
        auto series = station_mention_counts(records, w, 0);
        TimeWindow history{w.from - std::chrono::hours(baseline_hours), w.from};
        return detect_spikes(series, estimate_baseline(records, history), SpikeOptions{z, min_count});
    }
};

std::string hourly_csv(const HourlyVolume& v) {
    std::string out = "hour,count\n";
    for (std::size_t i = 0; i < v.hours.size(); ++i)
        out += csv::format_row({format_iso8601(v.hours[i]), std::to_string(v.counts[i])});
    return out;
}

std::string stations_csv(const StationSeries& s) {
    std::vector<std::string> header{"station"};
    for (auto h : s.hours) header.push_back(format_iso8601(h));
    header.push_back("total");
    std::string out = csv::format_row(header);
    for (const auto& r : s.stations) {
        std::vector<std::string> row{r.station};
        for (auto c : r.counts) row.push_back(std::to_string(c));
        row.push_back(std::to_string(r.total));
        out += csv::format_row(row);
    }
    return out;
}

std::string alerts_csv(const std::vector<SpikeAlert>& alerts) {
    std::string out = "station,hour_start,observed,baseline_mean,baseline_stdev,z\n";
    for (const auto& a : alerts) {
        char buf[3][32];
        std::snprintf(buf[0], sizeof buf[0], "%.4f", a.baseline_mean);
        std::snprintf(buf[1], sizeof buf[1], "%.4f", a.baseline_stdev);
        std::snprintf(buf[2], sizeof buf[2], "%.4f", a.z);
        out += csv::format_row(
            {a.station, format_iso8601(a.hour_start), std::to_string(a.observed), buf[0], buf[1], buf[2]});
    }
    return out;
}

std::string matrix_csv(const SentimentSarcasmMatrix& m) {
    std::string out = "sentiment,sarcastic,not_sarcastic\n";
    for (auto s : kSentiments)
        out += csv::format_row({std::string(to_string(s)), std::to_string(m.at(s, true)), std::to_string(m.at(s, false))});
    return out;
}

std::vector<ConsensusResult> in_window(const std::vector<ConsensusResult>& rs, const TimeWindow& w) {
    std::vector<ConsensusResult> out;
    for (const auto& r : rs)
        if (w.contains(r.created_at)) out.push_back(r);
    return out;
}

std::unique_ptr<Embedder> make_embedder(const std::string& embed_url, const std::string& embed_model) {
    if (embed_url.empty()) return std::make_unique<FallbackEmbedder>();
    GatewayConfig c;
    c.base_url = embed_url;
    if (!embed_model.empty()) c.model_id = embed_model;
    return std::make_unique<RemoteEmbedder>(c);
}

// -- serve: stop on SIGINT/SIGTERM --------------------------------------------

int serve(ServiceConfig cfg) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    Service svc(std::move(cfg));
    const auto& rec = svc.recovery();
    log("replayed " + std::to_string(rec.applied) + " events (last seq " + std::to_string(rec.last_seq) + ")");
    if (rec.corrupt_offset) log(rec.message);
    svc.start();

    httplib::Server srv;
    mount_service(srv, svc);
    if (!srv.bind_to_port(svc.config().host, svc.config().port))
        throw UsageError("cannot listen on " + svc.config().host + ":" + std::to_string(svc.config().port));
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        log("signal " + std::to_string(sig) + ", shutting down");
        srv.stop();
    });
    log("listening on http://" + svc.config().host + ":" + std::to_string(svc.config().port));
    srv.listen_after_bind();
    if (waiter.joinable()) {
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
    }
    svc.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transit rider feedback: classify, extract, retrieve, monitor."};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every command");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "load a tweet CSV and report what was kept");
    std::string ingest_path, ingest_out;
    bool ingest_strict = false, ingest_dedup = false;
    int utc_offset = kDefaultUtcOffsetMinutes;
    ingest->add_option("csv", ingest_path, "CSV with id, created_at, author, text")->required();
    ingest->add_flag("--strict", ingest_strict, "fail on the first bad row instead of skipping it");
    ingest->add_flag("--dedup", ingest_dedup, "drop retweets and repeated texts");
    ingest->add_option("--utc-offset", utc_offset, "minutes added to UTC for the hour-of-day histogram")
        ->capture_default_str();
    ingest->add_option("--out", ingest_out, "write the kept rows as CSV");

    // train
    auto* train = app.add_subcommand("train", "train a classical classifier on a labelled dataset");
    std::string task, model_kind, data_path, model_out = "model.json";
    ModelOptions mopt;
    train->add_option("--task", task, "sentiment, sarcasm or topic")->required()->check(
        CLI::IsMember({"sentiment", "sarcasm", "topic"}));
    train->add_option("--model", model_kind, "lr, knn or ffnn")->required()->check(CLI::IsMember({"lr", "knn", "ffnn"}));
    train->add_option("--data", data_path, "labelled CSV/TSV, or a directory with train and test files")->required();
    train->add_option("--out", model_out, "model file to write")->capture_default_str();
    train->add_option("--epochs", mopt.train.epochs, "training epochs")->capture_default_str();
    train->add_option("--lr", mopt.train.learning_rate, "learning rate")->capture_default_str();
    train->add_option("--l2", mopt.train.l2, "L2 penalty")->capture_default_str();
    train->add_option("--batch-size", mopt.train.batch_size, "mini-batch size")->capture_default_str();
    train->add_option("--seed", mopt.train.seed, "random seed")->capture_default_str();
    train->add_option("--hidden", mopt.hidden, "hidden units (ffnn)")->capture_default_str();
    train->add_option("--k", mopt.knn_k, "neighbours (knn)")->capture_default_str();
    train->add_option("--min-df", mopt.fit.min_df, "drop terms in fewer documents")->capture_default_str();
    std::size_t max_vocab = 0;
    train->add_option("--max-vocab", max_vocab, "keep only the most frequent terms (0: all)")->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a model file and print the report table");
    std::string eval_model, eval_data;
    bool eval_json = false;
    eval->add_option("--model-file", eval_model, "file written by `tpulse train`")->required();
    eval->add_option("--data", eval_data, "labelled data; test rows are used when present")->required();
    eval->add_flag("--json", eval_json, "print JSON instead of the table");

    // extract
    auto* extract = app.add_subcommand("extract", "structured extraction with k-sample voting; NDJSON on stdout");
    std::string ex_data, ex_stops, ex_docs_index, ex_template;
    bool ex_rag = false, ex_strict = false;
    ExtractOptions ex_opt;
    GatewayFlags ex_gw;
    extract->add_option("--data", ex_data, "tweet CSV")->required();
    extract->add_option("--k", ex_opt.k, "samples per tweet")->capture_default_str()->check(CLI::Range(1, 15));
    extract->add_option("--temperature", ex_opt.temperature, "sampling temperature")->capture_default_str();
    extract->add_option("--workers", ex_opt.workers, "tweets processed in parallel (1 with --mock-script)")
        ->capture_default_str();
    extract->add_flag("--rag", ex_rag, "add retrieved stop names or documentation to each prompt");
    extract->add_option("--stops", ex_stops, "GTFS stops.txt; enables station normalization")->check(CLI::ExistingFile);
    extract->add_option("--docs-index", ex_docs_index, "index from `tpulse index-docs` (fallback embedder)")
        ->check(CLI::ExistingFile);
    extract->add_option("--template", ex_template, "prompt template file")->check(CLI::ExistingFile);
    extract->add_flag("--strict", ex_strict, "fail on the first bad CSV row");
    ex_gw.add(extract);

    // index-stops
    auto* istops = app.add_subcommand("index-stops", "embed GTFS stop names into a vector index");
    std::string is_path, is_out = "stops_index.json", is_metric = "cosine";
    istops->add_option("stops", is_path, "GTFS stops.txt")->required();
    istops->add_option("--out", is_out, "index file to write")->capture_default_str();
    istops->add_option("--metric", is_metric, "cosine, dot or euclidean")->capture_default_str();

    // index-docs
    auto* idocs = app.add_subcommand("index-docs", "chunk and embed reference documents");
    std::string id_dir, id_out = "docs_index.json", id_metric = "cosine", id_embed_url, id_embed_model;
    std::size_t id_max = 512, id_overlap = 64;
    idocs->add_option("dir", id_dir, "directory of .md/.txt files")->required()->check(CLI::ExistingDirectory);
    idocs->add_option("--out", id_out, "index file to write")->capture_default_str();
    idocs->add_option("--metric", id_metric, "cosine, dot or euclidean")->capture_default_str();
    idocs->add_option("--max-tokens", id_max, "tokens per chunk")->capture_default_str();
    idocs->add_option("--overlap", id_overlap, "tokens shared by consecutive chunks")->capture_default_str();
    idocs->add_option("--embed-url", id_embed_url, "embedding endpoint (default: built-in hashing embedder)");
    idocs->add_option("--embed-model", id_embed_model, "embedding model id");

    // qa-bench
    auto* qa = app.add_subcommand("qa-bench", "multiple-choice (or programming) benchmark over GTFS questions");
    std::string qa_questions, qa_index, qa_embed_url, qa_embed_model;
    bool qa_rag = false, qa_programming = false;
    QaOptions qa_opt;
    GatewayFlags qa_gw;
    qa->add_option("--questions", qa_questions, "NDJSON question file")->required();
    qa->add_flag("--rag", qa_rag, "prepend retrieved documentation (needs --index)");
    qa->add_option("--index", qa_index, "index from `tpulse index-docs`");
    qa->add_flag("--programming", qa_programming, "questions carry a gold value instead of options");
    qa->add_option("--top-k", qa_opt.top_k, "chunks retrieved per question")->capture_default_str();
    qa->add_option("--workers", qa_opt.workers, "questions in parallel")->capture_default_str();
    qa->add_option("--embed-url", qa_embed_url, "embedding endpoint the index was built with");
    qa->add_option("--embed-model", qa_embed_model, "embedding model id");
    qa_gw.add(qa);

    // analyze
    auto* analyze = app.add_subcommand("analyze", "one analytics view as JSON (or CSV) on stdout");
    std::string view, an_format = "json", an_station;
    RecordSource an_src;
    WindowFlags an_win;
    AnalyticsFlags an_flags;
    analyze->add_option("view", view, "hourly, stations, matrix, keywords, alerts or drilldown")
        ->required()
        ->check(CLI::IsMember({"hourly", "stations", "matrix", "keywords", "alerts", "drilldown"}));
    an_src.add(analyze);
    an_win.add(analyze);
    an_flags.add(analyze);
    analyze->add_option("--station", an_station, "station for drilldown");
    analyze->add_option("--format", an_format, "json or csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");
    std::string sv_config, sv_host, sv_data_dir, sv_mock;
    int sv_port = -1;
    serve_cmd->add_option("--config", sv_config, "service JSON config")->check(CLI::ExistingFile);
    serve_cmd->add_option("--host", sv_host, "listen address (overrides config)");
    serve_cmd->add_option("--port", sv_port, "listen port (overrides config)");
    serve_cmd->add_option("--data-dir", sv_data_dir, "event log directory (overrides config)");
    serve_cmd->add_option("--mock-script", sv_mock, "replay LLM replies from this script")->check(CLI::ExistingFile);

    // report
    auto* report = app.add_subcommand("report", "write every analytics view as JSON and CSV files");
    std::string rp_out;
    RecordSource rp_src;
    WindowFlags rp_win;
    AnalyticsFlags rp_flags;
    report->add_option("--out", rp_out, "output directory (created if missing)")->required();
    rp_src.add(report);
    rp_win.add(report);
    rp_flags.add(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*ingest) {
            auto corpus = load_tweets(ingest_path, ingest_strict);
            const auto loaded = corpus.records.size();
            if (ingest_dedup) corpus = dedup_filter(corpus);
            auto hist = hourly_histogram(corpus, utc_offset);
            Json out{{"path", ingest_path},
                     {"count", corpus.records.size()},
                     {"skip_count", corpus.skip_count},
                     {"removed_by_dedup", loaded - corpus.records.size()},
                     {"hour_of_day", hist}};
            if (!corpus.records.empty()) {
                auto [mn, mx] = std::minmax_element(
                    corpus.records.begin(), corpus.records.end(),
                    [](const TweetRecord& a, const TweetRecord& b) { return a.created_at < b.created_at; });
                out["first"] = format_iso8601(mn->created_at);
                out["last"] = format_iso8601(mx->created_at);
            }
            if (!ingest_out.empty()) {
                std::string doc = csv::format_row({"id", "created_at", "author", "text"});
                for (const auto& t : corpus.records)
                    doc += csv::format_row({t.id, format_iso8601(t.created_at), t.author, t.text});
                write_text(ingest_out, doc);
            }
            std::cout << out.dump(2) << "\n";
        } else if (*train) {
            if (max_vocab) mopt.fit.max_vocab = max_vocab;
            auto split = load_labeled(data_path, task_schema(task));
            log("training " + model_kind + " on " + std::to_string(split.train.size()) + " rows");
            auto m = train_model(split, model_kind, task, mopt);
            write_json_file(model_out, to_json(m));
            auto train_report = evaluate_model(m, split.train);
            Json out{{"task", task},
                     {"model", model_kind},
                     {"out", model_out},
                     {"train_rows", split.train.size()},
                     {"test_rows", split.test.size()},
                     {"vocabulary", m.tfidf.dimension()},
                     {"train_accuracy", train_report.accuracy}};
            if (!split.test.empty()) out["test_accuracy"] = evaluate_model(m, split.test).accuracy;
            std::cout << out.dump(2) << "\n";
        } else if (*eval) {
            auto m = load_model_file(eval_model);
            auto split = load_labeled(eval_data, task_schema(m.task));
            const auto& rows = split.test.empty() ? split.train : split.test;
            if (split.test.empty()) log("no test rows marked; evaluating on every row");
            auto r = evaluate_model(m, rows);
            if (eval_json) std::cout << to_json(r).dump(2) << "\n";
            else std::cout << to_table(r);
        } else if (*extract) {
            if (ex_rag && ex_stops.empty() && ex_docs_index.empty())
                throw UsageError("--rag needs --stops or --docs-index to retrieve from");
            auto corpus = load_tweets(ex_data, ex_strict);
            auto gw = ex_gw.gateway();
            if (!ex_gw.mock_script.empty()) ex_opt.workers = 1;  // scripted replies are order-sensitive
            auto tpl = ex_template.empty() ? default_extraction_template() : load_template(ex_template);
            FallbackEmbedder emb;
            std::optional<VectorIndex> stops, docs;
            std::vector<DocumentChunk> stop_names;
            if (!ex_stops.empty()) stops = build_index(stop_chunks(parse_stops(ex_stops)), emb, Metric::cosine);
            if (!ex_docs_index.empty()) docs = load_index(ex_docs_index);
            StationNormalizer norm = [&](const std::string& m) { return normalize_station(m, *stops, emb).name; };
            ContextProvider ctx = [&](const TweetRecord& t) -> std::optional<std::string> {
                std::string c;
                try {
                    if (stops) {
                        c += "Official station names that may be relevant:";
                        for (const auto& h : retrieve(*stops, t.text, emb, 5).hits)
                            c += "\n- " + stops->chunk(h.position).text;
                    }
                    if (docs)
                        for (const auto& h : retrieve(*docs, t.text, emb, 3).hits)
                            c += "\n" + docs->chunk(h.position).text;
                } catch (const DataError&) {
                    return std::nullopt;
                }
                return c.empty() ? std::nullopt : std::optional<std::string>(c);
            };
            log("extracting " + std::to_string(corpus.records.size()) + " tweets, k=" + std::to_string(ex_opt.k));
            auto items = extract_batch(corpus.records, gw, tpl, ex_opt, stops ? &norm : nullptr,
                                       ex_rag ? &ctx : nullptr);
            std::cout << to_ndjson(items);
            std::size_t failed = 0, review = 0;
            for (const auto& it : items) {
                failed += !it.ok();
                review += it.ok() && it.result->review_pending();
            }
            log(std::to_string(items.size() - failed) + " extracted, " + std::to_string(failed) + " failed, " +
                std::to_string(review) + " flagged for review");
            if (!items.empty() && failed == items.size()) {
                log("every tweet failed: " + items.front().error);
                return 3;
            }
        } else if (*istops) {
            FallbackEmbedder emb;
            auto chunks = stop_chunks(parse_stops(is_path));
            auto index = build_index(chunks, emb, metric_from_string(is_metric));
            write_json_file(is_out, to_json(index));
            std::cout << Json{{"out", is_out}, {"stops", chunks.size()}, {"dim", index.dim()}, {"metric", is_metric}}.dump(2)
                      << "\n";
        } else if (*idocs) {
            auto docs = load_docs_dir(id_dir);
            if (docs.empty()) throw DataError("no .md or .txt files in '" + id_dir + "'");
            auto chunks = chunk_docs(docs, id_max, id_overlap);
            auto emb = make_embedder(id_embed_url, id_embed_model);
            auto index = build_index(chunks, *emb, metric_from_string(id_metric));
            write_json_file(id_out, to_json(index));
            std::cout << Json{{"out", id_out}, {"documents", docs.size()}, {"chunks", chunks.size()}, {"dim", index.dim()}}
                             .dump(2)
                      << "\n";
        } else if (*qa) {
            if (qa_rag && qa_index.empty())
                throw UsageError("--rag needs a documentation index: build one with `tpulse index-docs <dir> --out "
                                 "docs_index.json` and pass --index docs_index.json");
            qa_opt.with_rag = qa_rag;
            std::optional<VectorIndex> index;
            std::unique_ptr<Embedder> emb;
            if (qa_rag) {
                if (!fs::exists(qa_index))
                    throw UsageError("--index '" + qa_index + "' does not exist; build it with `tpulse index-docs`");
                index = load_index(qa_index);
                emb = make_embedder(qa_embed_url, qa_embed_model);
                if (emb->dim() != index->dim())
                    throw UsageError("index dimension " + std::to_string(index->dim()) + " does not match embedder (" +
                                     std::to_string(emb->dim()) + "); pass the --embed-url used to build it");
            }
            auto gw = qa_gw.gateway();
            if (!qa_gw.mock_script.empty()) qa_opt.workers = 1;
            QaReport r;
            if (qa_programming)
                r = score_program_answers(load_program_items(qa_questions), gw, default_program_template(),
                                          index ? &*index : nullptr, emb.get(), qa_opt);
            else
                r = run_qa(load_qa_items(qa_questions), gw, default_qa_template(), index ? &*index : nullptr, emb.get(),
                           qa_opt);
            std::cout << to_json(r).dump(2) << "\n";
            char buf[96];
            std::snprintf(buf, sizeof buf, "%zu/%zu correct (%.1f%%)%s", r.correct, r.total, 100.0 * r.accuracy(),
                          qa_rag ? " with retrieval" : "");
            log(buf);
        } else if (*analyze) {
            auto records = an_src.load();
            auto w = an_win.resolve(records);
            const bool as_csv = an_format == "csv";
            if (view == "hourly") {
                auto v = hourly_volume(records, w);
                std::cout << (as_csv ? hourly_csv(v) : to_json(v).dump(2) + "\n");
            } else if (view == "stations") {
                auto s = station_mention_counts(records, w, an_flags.top_n);
                std::cout << (as_csv ? stations_csv(s) : to_json(s).dump(2) + "\n");
            } else if (view == "matrix") {
                auto m = sentiment_sarcasm_matrix(in_window(records, w));
                std::cout << (as_csv ? matrix_csv(m) : to_json(m).dump(2) + "\n");
            } else if (view == "keywords") {
                auto k = keyword_summary(in_window(records, w), category_filter_from_string(an_flags.category),
                                         an_flags.stopwords(), an_flags.keyword_top_n);
                std::cout << (as_csv ? to_csv(k) : to_json(k).dump(2) + "\n");
            } else if (view == "alerts") {
                auto a = an_flags.alerts(records, w);
                std::cout << (as_csv ? alerts_csv(a) : to_json(a).dump(2) + "\n");
            } else {
                if (an_station.empty()) throw UsageError("drilldown needs --station");
                Json out = Json::array();
                for (const auto& r : drill_down(records, an_station, w, std::nullopt)) out.push_back(to_json(r));
                std::cout << out.dump(2) << "\n";
            }
        } else if (*serve_cmd) {
            ServiceConfig cfg = sv_config.empty() ? ServiceConfig{} : load_service_config(sv_config);
            if (!sv_host.empty()) cfg.host = sv_host;
            if (sv_port >= 0) cfg.port = sv_port;
            if (!sv_data_dir.empty()) cfg.data_dir = sv_data_dir;
            if (!sv_mock.empty()) cfg.mock_script = sv_mock;
            cfg.validate();
            return serve(std::move(cfg));
        } else if (*report) {
            auto records = rp_src.load();
            auto w = rp_win.resolve(records);
            fs::create_directories(rp_out);
            const fs::path dir(rp_out);
            auto windowed = in_window(records, w);
            auto hourly = hourly_volume(records, w);
            auto stations = station_mention_counts(records, w, rp_flags.top_n);
            auto matrix = sentiment_sarcasm_matrix(windowed);
            auto alerts = rp_flags.alerts(records, w);
            const auto stop = rp_flags.stopwords();
            write_json_file((dir / "hourly.json").string(), to_json(hourly));
            write_text(dir / "hourly.csv", hourly_csv(hourly));
            write_json_file((dir / "stations.json").string(), to_json(stations));
            write_text(dir / "stations.csv", stations_csv(stations));
            write_json_file((dir / "matrix.json").string(), to_json(matrix));
            write_text(dir / "matrix.csv", matrix_csv(matrix));
            write_json_file((dir / "alerts.json").string(), to_json(alerts));
            write_text(dir / "alerts.csv", alerts_csv(alerts));
            Json by_cat = Json::object();
            std::vector<std::string> cats{"all", "none"};
            for (auto t : kTopics) cats.emplace_back(to_string(t));
            for (const auto& c : cats) {
                auto k = keyword_summary(windowed, category_filter_from_string(c), stop, rp_flags.keyword_top_n);
                by_cat[c] = to_json(k)["terms"];
                if (c == "all") write_text(dir / "keywords.csv", to_csv(k));
            }
            write_json_file((dir / "keywords.json").string(), by_cat);
            Json manifest{{"from", format_iso8601(w.from)},
                          {"to", format_iso8601(w.to)},
                          {"records", windowed.size()},
                          {"files",
                           {"hourly.json", "hourly.csv", "stations.json", "stations.csv", "matrix.json", "matrix.csv",
                            "alerts.json", "alerts.csv", "keywords.json", "keywords.csv"}}};
            write_json_file((dir / "manifest.json").string(), manifest);
            std::cout << manifest.dump(2) << "\n";
        }
    } catch (const UsageError& e) {
        log(std::string("usage: ") + e.what());
        return 1;
    } catch (const UpstreamError& e) {
        log(std::string("upstream: ") + e.what());
        return 3;
    } catch (const DataError& e) {
        log(std::string("data: ") + e.what());
        return 2;
    } catch (const Json::exception& e) {
        log(std::string("data: ") + e.what());
        return 2;
    } catch (const fs::filesystem_error& e) {
        log(std::string("data: ") + e.what());
        return 2;
    }
    return 0;
}
