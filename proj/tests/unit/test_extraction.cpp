#include <gtest/gtest.h>

#include <random>

#include "oracles/consensus_oracle.hpp"
#include "oracles/extraction_fuzz.hpp"
#include "test_util.hpp"
#include "tpulse/extraction.hpp"

using namespace tpulse;

namespace {

TweetRecord tweet(std::string id, std::string text, std::int64_t epoch = 1700000000) {
    return {std::move(id), from_epoch_seconds(epoch), "rider", std::move(text)};
}

PromptTemplate plain_template() {
    PromptTemplate t;
    t.system_text = "You are a transit analyst.";
    t.task_text = "Extract the five fields as JSON.\n{{context}}Tweet: {{tweet}}";
    return t;
}

ExtractedRecord sample(std::string id, Sentiment s) {
    RawExtraction raw;
    raw.recovered["sentiment"] = std::string(to_string(s));
    return canonicalize(raw, std::move(id));
}

}  // namespace

// --- prompt ---------------------------------------------------------------

TEST(RenderPrompt, TwoMessagesTweetOnce) {
    auto msgs = render_prompt(plain_template(), tweet("1", "stuck at Kennedy"));
    ASSERT_EQ(msgs.size(), 2u);
    EXPECT_EQ(msgs[0].role, Role::system);
    EXPECT_EQ(msgs[0].content, "You are a transit analyst.");
    EXPECT_EQ(msgs[1].role, Role::user);
    EXPECT_EQ(text::count_occurrences(msgs[1].content, "stuck at Kennedy"), 1u);
    EXPECT_EQ(msgs[1].content.find("{{"), std::string::npos);
}

TEST(RenderPrompt, ContextPrecedesTweet) {
    auto msgs = render_prompt(plain_template(), tweet("1", "stuck at Kennedy"), "Kennedy Station, stop 123");
    const auto& u = msgs.back().content;
    auto c = u.find("Kennedy Station, stop 123");
    auto t = u.find("stuck at Kennedy");
    ASSERT_NE(c, std::string::npos);
    EXPECT_LT(c, t);
}

TEST(RenderPrompt, ContextWithoutExplicitSlotStillPrecedesTweet) {
    auto tpl = plain_template();
    tpl.task_text = "Fields please. Tweet: {{tweet}} -- thanks";
    auto u = render_prompt(tpl, tweet("1", "bus late"), "Route 29 info").back().content;
    EXPECT_LT(u.find("Route 29 info"), u.find("bus late"));
    EXPECT_NE(u.find("-- thanks"), std::string::npos);
}

TEST(RenderPrompt, PlaceholderLiteralInTweetIsEscaped) {
    auto msgs = render_prompt(plain_template(), tweet("1", "what is {{tweet}} and {{{context}}}?"));
    const auto& u = msgs.back().content;
    EXPECT_EQ(text::count_occurrences(u, "{{tweet}}"), 0u);
    EXPECT_EQ(text::count_occurrences(u, "{{context}}"), 0u);
    EXPECT_EQ(text::count_occurrences(u, escape_placeholders("what is {{tweet}} and {{{context}}}?")), 1u);
}

TEST(RenderPrompt, MissingOrDuplicateSlotRejected) {
    auto tpl = plain_template();
    tpl.task_text = "no slot here";
    EXPECT_THROW(render_prompt(tpl, tweet("1", "x")), UsageError);
    tpl.task_text = "{{tweet}} and {{tweet}}";
    EXPECT_THROW(render_prompt(tpl, tweet("1", "x")), UsageError);
    tpl.task_text = "{{tweet}} then {{context}}";
    EXPECT_THROW(render_prompt(tpl, tweet("1", "x")), UsageError);
}

TEST(RenderPrompt, FewShotPairsPrecedeTarget) {
    auto msgs = render_prompt(default_extraction_template(), tweet("1", "stuck at Kennedy"));
    ASSERT_EQ(msgs.size(), 4u);
    EXPECT_EQ(msgs[1].role, Role::user);
    EXPECT_EQ(msgs[2].role, Role::assistant);
    EXPECT_EQ(msgs[3].role, Role::user);
    EXPECT_EQ(text::count_occurrences(msgs[3].content, "stuck at Kennedy"), 1u);
    for (auto key : {"\"station\"", "\"sentiment\"", "\"sarcasm\"", "\"problem_topic\"", "\"problem_summary\""})
        EXPECT_NE(msgs[3].content.find(key), std::string::npos) << key;
}

TEST(PromptTemplateFile, ParsesSectionsAndExamples) {
    auto tpl = parse_template(
        "#! comment\n### system\nBe terse.\n### user\nTweet: {{tweet}}\n"
        "### example tweet\nbus late\n### example answer\n{\"sentiment\": \"negative\"}\n");
    EXPECT_EQ(tpl.system_text, "Be terse.");
    EXPECT_EQ(tpl.task_text, "Tweet: {{tweet}}");
    ASSERT_EQ(tpl.few_shot.size(), 1u);
    EXPECT_EQ(tpl.few_shot[0].tweet, "bus late");
    EXPECT_THROW(parse_template("### system\nx\n### user\nno slot\n"), DataError);
    EXPECT_THROW(parse_template("### system\nx\n### user\n{{tweet}}\n### example tweet\na\n"), DataError);
    EXPECT_THROW(parse_template("### sistem\nx\n"), DataError);
}

TEST(PromptTemplateFile, ShippedTemplateLoads) {
    auto tpl = load_template(std::string(TPULSE_SHARE_DIR) + "/prompts/extraction.txt");
    auto builtin = default_extraction_template();
    EXPECT_EQ(tpl.system_text, builtin.system_text);
    EXPECT_EQ(tpl.task_text, builtin.task_text);
    ASSERT_EQ(tpl.few_shot.size(), builtin.few_shot.size());
}

// --- parse_output -----------------------------------------------------------

TEST(ParseOutput, FencedSingleQuotedTrailingComma) {
    auto r = parse_output("```json\n{'Sentiment': 'Negative',}\n```");
    ASSERT_EQ(r.recovered.size(), 1u);
    EXPECT_EQ(r.recovered.at("sentiment"), "Negative");
    EXPECT_NE(std::find(r.diagnostics.begin(), r.diagnostics.end(), "fence stripped"), r.diagnostics.end());
}

TEST(ParseOutput, SurroundingProseAndSynonymKey) {
    auto r = parse_output("Sure! Here is the result: {\"station\": \"Bloor\", \"sarcasm\": false}");
    EXPECT_EQ(r.recovered.at("station_mention"), "Bloor");
    EXPECT_EQ(r.recovered.at("sarcasm"), "false");
    EXPECT_EQ(r.recovered.size(), 2u);
}

TEST(ParseOutput, UnquotedKeysBareLiterals) {
    auto r = parse_output("{station: Kennedy, Sarcasm: true, topic: travel time}");
    EXPECT_EQ(r.recovered.at("station_mention"), "Kennedy");
    EXPECT_EQ(r.recovered.at("sarcasm"), "true");
    EXPECT_EQ(r.recovered.at("problem_topic"), "travel time");
}

TEST(ParseOutput, ApostropheInsideSingleQuotedValue) {
    auto r = parse_output("{'summary': 'driver didn't stop', 'station': 'Queen's Park'}");
    EXPECT_EQ(r.recovered.at("problem_summary"), "driver didn't stop");
    EXPECT_EQ(r.recovered.at("station_mention"), "Queen's Park");
}

TEST(ParseOutput, KeyValueLinesFallback) {
    auto r = parse_output("Sentiment: negative\n- Station: Union\nProblem topic: capacity_availability\nrandom: x");
    EXPECT_EQ(r.recovered.at("sentiment"), "negative");
    EXPECT_EQ(r.recovered.at("station_mention"), "Union");
    EXPECT_EQ(r.recovered.at("problem_topic"), "capacity_availability");
    EXPECT_FALSE(r.has("random"));
}

TEST(ParseOutput, UnterminatedBlockKeepsWhatItCan) {
    auto r = parse_output("{\"sentiment\": \"positive\", \"station\": \"Fin");
    EXPECT_EQ(r.recovered.at("sentiment"), "positive");
    EXPECT_FALSE(r.diagnostics.empty());
}

TEST(ParseOutput, NestedValueKeptRaw) {
    auto r = parse_output(R"({"sentiment": "neutral", "extra": {"a": [1, 2]}})");
    EXPECT_EQ(r.recovered.at("sentiment"), "neutral");
    EXPECT_TRUE(r.has("extra"));
}

TEST(ParseOutput, EmptyRecoveryHasDiagnostics) {
    for (auto s : {"", "I cannot help with that.", "{}", "{{{{", "}", "```", "```json\n```"}) {
        auto r = parse_output(s);
        EXPECT_TRUE(r.recovered.empty()) << s;
        EXPECT_FALSE(r.diagnostics.empty()) << s;
    }
}

TEST(ParseOutput, FuzzCorpusRecoversFields) {
    auto corpus = oracle::corruption_corpus();
    ASSERT_EQ(corpus.size(), 200u);
    int ok = 0;
    for (const auto& fc : corpus) ok += oracle::recovered_fields(fc);
    EXPECT_GE(ok, 950) << "recovered " << ok << " of 1000 fields";
}

TEST(ParseOutput, RandomBytesNeverThrow) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 2000; ++i) {
        auto s = oracle::random_bytes(rng);
        auto r = parse_output(s);
        if (r.recovered.empty()) EXPECT_FALSE(r.diagnostics.empty());
        auto rec = canonicalize(r, "x");
        EXPECT_LE(text::utf8_length(rec.problem_summary), kSummaryMaxChars);
    }
}

// --- canonicalize -------------------------------------------------------------

TEST(Canonicalize, EnumsCaseInsensitive) {
    RawExtraction raw;
    raw.recovered = {{"sentiment", "NEGATIVE"}, {"sarcasm", "not sarcastic"}, {"problem_topic", "Travel Time"}};
    auto r = canonicalize(raw, "t1");
    EXPECT_EQ(r.sentiment, Sentiment::negative);
    EXPECT_EQ(r.flag(Field::sentiment).status, FieldStatus::parsed);
    EXPECT_FALSE(r.sarcasm);
    EXPECT_EQ(r.flag(Field::sarcasm).status, FieldStatus::parsed);
    EXPECT_EQ(r.problem_topic, Topic::travel_time);
    EXPECT_EQ(r.flag(Field::station).status, FieldStatus::defaulted);
}

TEST(Canonicalize, AgencyAliasesNulled) {
    for (auto alias : {"TTC", "ttc service", "TTC  Customer Service"}) {
        RawExtraction raw;
        raw.recovered["station_mention"] = alias;
        auto r = canonicalize(raw, "t");
        EXPECT_FALSE(r.station_mention) << alias;
        EXPECT_EQ(r.flag(Field::station).status, FieldStatus::parsed);
    }
}

TEST(Canonicalize, OutOfEnumDefaultsAndFlags) {
    RawExtraction raw;
    raw.recovered = {{"problem_topic", "commute speed"}, {"sentiment", "angry"}, {"sarcasm", "maybe"}};
    auto r = canonicalize(raw, "t");
    EXPECT_FALSE(r.problem_topic);
    EXPECT_EQ(r.flag(Field::problem_topic).status, FieldStatus::unparseable);
    EXPECT_EQ(r.sentiment, Sentiment::neutral);
    EXPECT_EQ(r.flag(Field::sentiment).status, FieldStatus::unparseable);
    EXPECT_FALSE(r.sarcasm);
    EXPECT_EQ(r.flag(Field::sarcasm).status, FieldStatus::unparseable);
}

TEST(Canonicalize, NaTopicIsNone) {
    RawExtraction raw;
    raw.recovered["problem_topic"] = "n/a";
    auto r = canonicalize(raw, "t");
    EXPECT_FALSE(r.problem_topic);
    EXPECT_EQ(r.flag(Field::problem_topic).status, FieldStatus::parsed);
}

TEST(Canonicalize, SummaryCapped) {
    RawExtraction raw;
    std::string longtext;
    for (int i = 0; i < 100; ++i) longtext += "é x ";
    raw.recovered["problem_summary"] = longtext;
    auto r = canonicalize(raw, "t");
    EXPECT_EQ(text::utf8_length(r.problem_summary), kSummaryMaxChars);
}

TEST(Canonicalize, IdempotentOnFuzzCorpus) {
    for (const auto& fc : oracle::corruption_corpus(200, 99)) {
        auto once = canonicalize(parse_output(fc.text), fc.truth.tweet_id);
        EXPECT_EQ(canonicalize(once), once);
        auto again = canonicalize(to_raw(once), once.tweet_id);
        EXPECT_EQ(again.station_mention, once.station_mention);
        EXPECT_EQ(again.sentiment, once.sentiment);
        EXPECT_EQ(again.sarcasm, once.sarcasm);
        EXPECT_EQ(again.problem_topic, once.problem_topic);
        EXPECT_EQ(again.problem_summary, once.problem_summary);
        for (auto f : kFields)
            if (once.flag(f).status == FieldStatus::parsed) EXPECT_EQ(again.flag(f), once.flag(f));
    }
}

// --- consensus ----------------------------------------------------------------

TEST(Consensus, MajorityMode) {
    auto c = consensus({sample("t", Sentiment::negative), sample("t", Sentiment::negative),
                        sample("t", Sentiment::positive)});
    EXPECT_EQ(c.record.sentiment, Sentiment::negative);
    EXPECT_NEAR(c.agreement.at(Field::sentiment), 2.0 / 3.0, 1e-12);
}

TEST(Consensus, TieGoesToEarliest) {
    auto c = consensus({sample("t", Sentiment::negative), sample("t", Sentiment::positive)});
    EXPECT_EQ(c.record.sentiment, Sentiment::negative);
    EXPECT_DOUBLE_EQ(c.agreement.at(Field::sentiment), 0.5);
    auto d = consensus({sample("t", Sentiment::positive), sample("t", Sentiment::negative)});
    EXPECT_EQ(d.record.sentiment, Sentiment::positive);
}

TEST(Consensus, AllUnparseableDefaults) {
    RawExtraction raw;
    raw.recovered["sarcasm"] = "perhaps";
    auto s = canonicalize(raw, "t");
    auto c = consensus({s, s, s});
    EXPECT_FALSE(c.record.sarcasm);
    EXPECT_EQ(c.agreement.at(Field::sarcasm), 0.0);
    EXPECT_EQ(c.record.flag(Field::sarcasm).status, FieldStatus::defaulted);
    EXPECT_TRUE(c.review_pending());
}

TEST(Consensus, MixedTweetIdsRejected) {
    EXPECT_THROW(consensus({sample("a", Sentiment::neutral), sample("b", Sentiment::neutral)}), DataError);
    EXPECT_THROW(consensus({}), UsageError);
}

TEST(Consensus, ExhaustiveSentimentAgainstOracle) {
    for (int k : {1, 2, 3, 5}) {
        for (const auto& assignment : oracle::all_assignments(k, 3)) {
            std::vector<ExtractedRecord> samples;
            for (int v : assignment) samples.push_back(sample("t", kSentiments[static_cast<std::size_t>(v)]));
            auto c = consensus(samples);
            auto o = oracle::mode_earliest(assignment);
            ASSERT_EQ(static_cast<int>(c.record.sentiment), o.value);
            ASSERT_NEAR(c.agreement.at(Field::sentiment), o.agreement, 1e-12);
        }
    }
}

TEST(Consensus, ExhaustiveWithUnparseableSamples) {
    for (int k : {1, 2, 3, 4}) {
        for (auto assignment : oracle::all_assignments(k, 4)) {
            std::vector<ExtractedRecord> samples;
            for (auto& v : assignment) {
                if (v == 3) {
                    RawExtraction raw;
                    raw.recovered["sentiment"] = "???";
                    samples.push_back(canonicalize(raw, "t"));
                    v = -1;
                } else {
                    samples.push_back(sample("t", kSentiments[static_cast<std::size_t>(v)]));
                }
            }
            auto c = consensus(samples);
            auto o = oracle::mode_earliest(assignment);
            if (o.value < 0) {
                ASSERT_EQ(c.record.sentiment, Sentiment::neutral);
                ASSERT_EQ(c.agreement.at(Field::sentiment), 0.0);
            } else {
                ASSERT_EQ(static_cast<int>(c.record.sentiment), o.value);
                ASSERT_NEAR(c.agreement.at(Field::sentiment), o.agreement, 1e-12);
            }
        }
    }
}

TEST(Consensus, StrictMajorityIsPermutationInvariant) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<ExtractedRecord> samples;
        int k = 1 + static_cast<int>(rng() % 7);
        for (int i = 0; i < k; ++i) samples.push_back(sample("t", kSentiments[rng() % 3]));
        auto base = consensus(samples);
        if (base.agreement.at(Field::sentiment) * k <= k / 2.0) continue;
        std::shuffle(samples.begin(), samples.end(), rng);
        auto shuffled = consensus(samples);
        EXPECT_EQ(shuffled.record.sentiment, base.record.sentiment);
        EXPECT_DOUBLE_EQ(shuffled.agreement.at(Field::sentiment), base.agreement.at(Field::sentiment));
    }
}

TEST(Consensus, SummaryFromMostAgreeingSample) {
    auto mk = [](const char* sent, const char* topic, const char* summary) {
        RawExtraction raw;
        raw.recovered = {{"sentiment", sent}, {"problem_topic", topic}, {"problem_summary", summary},
                         {"sarcasm", "false"}, {"station_mention", "Bloor"}};
        return canonicalize(raw, "t");
    };
    auto c = consensus({mk("positive", "maintenance", "first"), mk("negative", "travel_time", "second"),
                        mk("negative", "travel_time", "third")});
    EXPECT_EQ(c.record.problem_summary, "second");
    EXPECT_DOUBLE_EQ(c.agreement.at(Field::station), 1.0);
    EXPECT_FALSE(c.review_pending());
}

TEST(Consensus, StationVoteIgnoresCase) {
    auto mk = [](const char* st) {
        RawExtraction raw;
        raw.recovered["station_mention"] = st;
        return canonicalize(raw, "t");
    };
    auto c = consensus({mk("Union"), mk("union"), mk("Finch")});
    EXPECT_EQ(c.record.station_mention, "Union");
    EXPECT_NEAR(c.agreement.at(Field::station), 2.0 / 3.0, 1e-12);
}

TEST(Consensus, AgreementBoundsOnRandomSamples) {
    std::mt19937_64 rng(5);
    for (const auto& fc : oracle::corruption_corpus(60, 3)) {
        std::vector<ExtractedRecord> samples;
        for (int i = 0; i < 5; ++i) {
            auto t = oracle::random_truth(rng, 0);
            t.tweet_id = fc.truth.tweet_id;
            samples.push_back(canonicalize(to_raw(t), t.tweet_id));
        }
        auto c = consensus(samples);
        for (const auto& [f, a] : c.agreement) {
            EXPECT_GE(a, 0.0);
            EXPECT_LE(a, 1.0);
        }
        auto same = consensus({samples[0], samples[0], samples[0]});
        for (const auto& [f, a] : same.agreement) EXPECT_DOUBLE_EQ(a, 1.0);
    }
}

TEST(ConsensusJson, RoundTrip) {
    RawExtraction raw;
    raw.recovered = {{"sentiment", "negative"}, {"station_mention", "Bloor"}, {"problem_summary", "long line"}};
    auto c = consensus({canonicalize(raw, "t9")});
    c.created_at = from_epoch_seconds(1700000000);
    c.text = "long line at Bloor";
    c.record.station_canonical = "Bloor-Yonge Station";
    auto back = consensus_from_json(to_json(c));
    EXPECT_EQ(back.record, c.record);
    EXPECT_EQ(back.agreement, c.agreement);
    EXPECT_EQ(back.created_at, c.created_at);
    EXPECT_EQ(back.text, c.text);
}

// --- extract_batch ------------------------------------------------------------

namespace {

std::shared_ptr<ScriptedTransport> script_for(const std::vector<std::pair<std::string, std::vector<std::string>>>& rules) {
    auto t = std::make_shared<ScriptedTransport>();
    for (const auto& [needle, replies] : rules) {
        std::vector<TransportReply> rs;
        for (const auto& r : replies) rs.push_back(ScriptedTransport::text_reply(r));
        t->add_rule({needle}, rs);
    }
    return t;
}

Gateway quiet_gateway(std::shared_ptr<Transport> t, int retries = 0) {
    GatewayConfig cfg;
    cfg.max_retries = retries;
    Gateway g(cfg, std::move(t));
    g.set_sleeper([](auto) {});
    return g;
}

}  // namespace

TEST(ExtractBatch, ThreeTweetsDeterministic) {
    std::vector<TweetRecord> tweets{tweet("1", "delay at Union #1"), tweet("2", "crowded at Finch #2"),
                                    tweet("3", "thanks driver #3")};
    auto run = [&] {
        auto t = script_for({
            {"#1", {R"({"station":"Union","sentiment":"negative","sarcasm":false,"problem_topic":"travel_time","problem_summary":"delay"})",
                    R"({"station":"Union","sentiment":"negative","sarcasm":false,"problem_topic":"travel_time","problem_summary":"delay"})",
                    R"({"station":"Union","sentiment":"neutral","sarcasm":false,"problem_topic":"travel_time","problem_summary":"delay"})"}},
            {"#2", {R"({"station":"Finch","sentiment":"negative","sarcasm":true,"problem_topic":"capacity_availability","problem_summary":"crowded"})",
                    R"({"station":"Finch","sentiment":"negative","sarcasm":true,"problem_topic":"capacity_availability","problem_summary":"crowded"})",
                    R"({"station":"Finch","sentiment":"negative","sarcasm":true,"problem_topic":"capacity_availability","problem_summary":"crowded"})"}},
            {"#3", {R"({"station":"none","sentiment":"positive","sarcasm":false,"problem_topic":"none","problem_summary":""})",
                    R"({"station":"none","sentiment":"positive","sarcasm":false,"problem_topic":"none","problem_summary":""})",
                    R"({"station":"none","sentiment":"positive","sarcasm":false,"problem_topic":"none","problem_summary":""})"}},
        });
        auto g = quiet_gateway(t);
        ExtractOptions opt;
        opt.workers = 3;
        return to_ndjson(extract_batch(tweets, g, plain_template(), opt));
    };
    auto first = run();
    EXPECT_EQ(run(), first);
    ASSERT_EQ(first.back(), '\n');
    auto lines = text::split_lines(first.substr(0, first.size() - 1));
    ASSERT_EQ(lines.size(), 3u);
    auto j1 = Json::parse(lines[0]);
    EXPECT_EQ(j1["tweet_id"], "1");
    EXPECT_EQ(j1["sentiment"], "negative");
    EXPECT_NEAR(j1["agreement"]["sentiment"].get<double>(), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(Json::parse(lines[1])["sarcasm"], true);
    EXPECT_TRUE(Json::parse(lines[2])["station_mention"].is_null());
}

TEST(ExtractBatch, FailingTweetBecomesErrorItem) {
    std::vector<TweetRecord> tweets{tweet("ok1", "fine #a"), tweet("bad", "broken #b"), tweet("ok2", "fine #c")};
    auto t = script_for({{"#a", {"{\"sentiment\":\"positive\"}"}}, {"#c", {"{\"sentiment\":\"negative\"}"}}});
    t->add_rule({"#b"}, {ScriptedTransport::failure(TransportReply::Status::timeout)});
    auto g = quiet_gateway(t);
    ExtractOptions opt;
    opt.k = 1;
    auto items = extract_batch(tweets, g, plain_template(), opt);
    ASSERT_EQ(items.size(), 3u);
    EXPECT_TRUE(items[0].ok());
    EXPECT_FALSE(items[1].ok());
    EXPECT_EQ(items[1].tweet_id, "bad");
    EXPECT_FALSE(items[1].error.empty());
    EXPECT_TRUE(items[2].ok());
    EXPECT_EQ(items[2].result->record.sentiment, Sentiment::negative);
}

TEST(ExtractBatch, PartialSampleFailureStillVotes) {
    auto t = script_for({{"#x", {"{\"sentiment\":\"negative\"}", "{\"sentiment\":\"negative\"}"}}});
    auto g = quiet_gateway(t);
    auto items = extract_batch({tweet("x", "hmm #x")}, g, plain_template(), ExtractOptions{});
    ASSERT_TRUE(items[0].ok());
    EXPECT_EQ(items[0].result->sample_count, 2);
    EXPECT_EQ(items[0].result->record.sentiment, Sentiment::negative);
}

TEST(ExtractBatch, NormalizerAndContextApplied) {
    auto t = std::make_shared<FunctionTransport>([](const CompletionRequest& r) {
        bool has_ctx = r.last_user_content().find("Bloor-Yonge Station") != std::string::npos;
        return ScriptedTransport::text_reply(has_ctx ? R"({"station":"Bloor"})" : R"({"station":"none"})");
    });
    auto g = quiet_gateway(t);
    StationNormalizer norm = [](const std::string& m) -> std::optional<std::string> {
        return m == "Bloor" ? std::optional<std::string>("Bloor-Yonge Station") : std::nullopt;
    };
    ContextProvider ctx = [](const TweetRecord&) { return std::optional<std::string>("Bloor-Yonge Station"); };
    ExtractOptions opt;
    opt.k = 1;
    auto items = extract_batch({tweet("1", "at bloor")}, g, plain_template(), opt, &norm, &ctx);
    ASSERT_TRUE(items[0].ok());
    EXPECT_EQ(items[0].result->record.station_canonical, "Bloor-Yonge Station");
}

TEST(ExtractBatch, PlantedDistributionReproducedExactly) {
    // 500 tweets, each scripted with three identical replies drawn from a planted distribution.
    std::mt19937_64 rng(2024);
    std::vector<TweetRecord> tweets;
    auto t = std::make_shared<ScriptedTransport>();
    std::array<int, 3> planted{};
    for (int i = 0; i < 500; ++i) {
        auto truth = oracle::random_truth(rng, i);
        ++planted[static_cast<std::size_t>(truth.sentiment)];
        auto tag = "[#" + std::to_string(i) + "]";
        tweets.push_back(tweet(truth.tweet_id, "post " + tag));
        auto reply = to_json(truth).dump();
        t->add_rule({tag}, std::vector<TransportReply>(3, ScriptedTransport::text_reply(reply)));
    }
    auto g = quiet_gateway(t);
    auto items = extract_batch(tweets, g, plain_template(), ExtractOptions{});
    std::array<int, 3> got{};
    for (const auto& it : items) {
        ASSERT_TRUE(it.ok()) << it.error;
        ++got[static_cast<std::size_t>(it.result->record.sentiment)];
    }
    EXPECT_EQ(got, planted);
}

TEST(ExtractBatch, RejectsBadK) {
    auto g = quiet_gateway(std::make_shared<ScriptedTransport>());
    ExtractOptions opt;
    opt.k = 0;
    EXPECT_THROW(extract_batch({}, g, plain_template(), opt), UsageError);
}
