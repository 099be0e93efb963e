#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tpulse/csv.hpp"
#include "tpulse/error.hpp"
#include "tpulse/gateway.hpp"
#include "tpulse/json_io.hpp"
#include "tpulse/prompt.hpp"
#include "tpulse/rag.hpp"
#include "tpulse/text.hpp"

namespace tpulse {

// ---------------------------------------------------------------------------
// stops.txt

struct StopRecord {
    std::string stop_id;
    std::string stop_name;
    double lat = 0;
    double lon = 0;

    friend bool operator==(const StopRecord&, const StopRecord&) = default;
};

namespace detail {

inline std::optional<double> parse_double(std::string_view s) {
    s = text::trim_view(s);
    if (s.empty()) return std::nullopt;
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace detail

inline std::vector<StopRecord> parse_stops_table(const csv::Table& t, std::string_view origin) {
    auto col = [&](std::string_view name) {
        auto c = t.column(name);
        if (!c) throw DataError(std::string(origin) + ": missing required column '" + std::string(name) + "'");
        return *c;
    };
    const auto c_id = col("stop_id"), c_name = col("stop_name"), c_lat = col("stop_lat"), c_lon = col("stop_lon");
    std::vector<StopRecord> out;
    std::set<std::string> seen;
    for (const auto& row : t.rows) {
        auto where = std::string(origin) + ": row " + std::to_string(row.number);
        if (row.fields.size() != t.header.size()) throw DataError(where + ": wrong number of fields");
        StopRecord s;
        s.stop_id = text::trim(row.fields[c_id]);
        s.stop_name = text::trim(row.fields[c_name]);
        if (s.stop_id.empty()) throw DataError(where + ": empty stop_id");
        if (s.stop_name.empty()) throw DataError(where + ": empty stop_name");
        auto lat = detail::parse_double(row.fields[c_lat]);
        auto lon = detail::parse_double(row.fields[c_lon]);
        if (!lat || *lat < -90 || *lat > 90) throw DataError(where + ": stop_lat out of range [-90, 90]");
        if (!lon || *lon < -180 || *lon > 180) throw DataError(where + ": stop_lon out of range [-180, 180]");
        s.lat = *lat;
        s.lon = *lon;
        if (!seen.insert(s.stop_id).second) throw DataError(where + ": duplicate stop_id '" + s.stop_id + "'");
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<StopRecord> parse_stops(const std::string& path) {
    return parse_stops_table(csv::read(path), path);
}

/// One chunk per distinct stop name (GTFS lists platforms separately); the
/// first stop_id carrying the name becomes the chunk id.
inline std::vector<DocumentChunk> stop_chunks(const std::vector<StopRecord>& stops) {
    std::vector<DocumentChunk> out;
    std::map<std::string, std::size_t> by_name;
    for (const auto& s : stops) {
        auto [it, fresh] = by_name.emplace(s.stop_name, out.size());
        if (!fresh) {
            out[it->second].metadata["stop_ids"] += " " + s.stop_id;
            continue;
        }
        char coords[64];
        std::snprintf(coords, sizeof coords, "%.6f,%.6f", s.lat, s.lon);
        out.push_back({s.stop_id, s.stop_name, {{"source", "stops"}, {"stop_ids", s.stop_id}, {"coords", coords}}});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reference documentation chunking

struct SourceDoc {
    std::string source;
    std::string text;
};

inline std::vector<std::string> whitespace_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && text::is_space(s[i])) ++i;
        std::size_t j = i;
        while (j < s.size() && !text::is_space(s[j])) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

/// Markdown-heading sections, then token windows of max_units with the given
/// overlap. Chunk ids are "<source>#<ordinal>"; metadata records the section,
/// the window's first token within the section, and how many leading tokens
/// repeat the previous chunk.
inline std::vector<DocumentChunk> chunk_docs(const std::vector<SourceDoc>& docs, std::size_t max_units,
                                             std::size_t overlap) {
    if (max_units == 0 || overlap >= max_units) throw UsageError("chunk_docs: need max_units > overlap >= 0");
    std::vector<DocumentChunk> out;
    for (const auto& doc : docs) {
        struct Section {
            std::string heading;
            std::string body;
        };
        std::vector<Section> sections;
        for (const auto& line : text::split_lines(doc.text)) {
            bool heading = text::trim_view(line).starts_with("#");
            if (heading || sections.empty()) {
                std::string title;
                if (heading) {
                    auto t = text::trim_view(line);
                    while (!t.empty() && t.front() == '#') t.remove_prefix(1);
                    title = text::trim(t);
                }
                if (heading || sections.empty()) sections.push_back({title, {}});
            }
            sections.back().body += line;
            sections.back().body += '\n';
        }
        std::size_t ordinal = 0;
        for (std::size_t si = 0; si < sections.size(); ++si) {
            const auto& sec = sections[si];
            auto body = text::trim(sec.body);
            auto tokens = whitespace_tokens(body);
            if (tokens.empty()) continue;
            auto emit = [&](std::string chunk_text, std::size_t start, std::size_t ov) {
                out.push_back({doc.source + "#" + std::to_string(ordinal++),
                               std::move(chunk_text),
                               {{"source", doc.source},
                                {"section", sec.heading},
                                {"section_index", std::to_string(si)},
                                {"token_start", std::to_string(start)},
                                {"overlap", std::to_string(ov)}}});
            };
            if (tokens.size() <= max_units) {
                emit(body, 0, 0);
                continue;
            }
            const auto step = max_units - overlap;
            for (std::size_t start = 0;; start += step) {
                const auto end = std::min(start + max_units, tokens.size());
                std::string joined;
                for (std::size_t t = start; t < end; ++t) {
                    if (t > start) joined += ' ';
                    joined += tokens[t];
                }
                emit(std::move(joined), start, start == 0 ? 0 : overlap);
                if (end == tokens.size()) break;
            }
        }
    }
    return out;
}

/// Every *.md / *.txt file in a directory, in file-name order.
inline std::vector<SourceDoc> load_docs_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("docs directory '" + dir + "' not found");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && (e.path().extension() == ".md" || e.path().extension() == ".txt"))
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("docs directory '" + dir + "' has no .md or .txt files");
    std::vector<SourceDoc> docs;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        docs.push_back({f.filename().string(), ss.str()});
    }
    return docs;
}

// ---------------------------------------------------------------------------
// QA benchmark

inline const std::vector<std::string>& qa_categories() {
    static const std::vector<std::string> v{"term_definitions", "common_reasoning",  "file_structure",
                                            "attribute_mapping", "data_structure", "categorical_mapping"};
    return v;
}

struct QaItem {
    std::string id;
    std::string category;
    std::string question;
    std::vector<std::string> options;
    std::size_t gold_index = 0;
};

struct ProgramItem {
    std::string id;
    std::string question;
    Json gold_answer;  // string or number
};

namespace detail {

template <class F>
void for_each_ndjson(const std::string& path, F&& f) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (text::trim_view(line).empty()) continue;
        auto where = path + ": line " + std::to_string(n);
        Json j = Json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw DataError(where + ": not a JSON object");
        try {
            f(j, where);
        } catch (const Json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
    }
}

}  // namespace detail

inline QaItem qa_item_from_json(const Json& j, const std::string& where) {
    QaItem q;
    q.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    auto cat = text::label_key(j.at("category").get<std::string>());
    const auto& cats = qa_categories();
    if (std::find(cats.begin(), cats.end(), cat) == cats.end())
        throw DataError(where + ": unknown category '" + j.at("category").get<std::string>() + "'");
    q.category = cat;
    q.question = j.at("question").get<std::string>();
    q.options = j.at("options").get<std::vector<std::string>>();
    if (q.options.size() < 2) throw DataError(where + ": fewer than two options");
    if (q.options.size() > 5) throw DataError(where + ": more than five options");
    auto g = j.at("gold_index").get<long long>();
    if (g < 0 || static_cast<std::size_t>(g) >= q.options.size()) throw DataError(where + ": gold_index out of range");
    q.gold_index = static_cast<std::size_t>(g);
    return q;
}

inline std::vector<QaItem> load_qa_items(const std::string& path) {
    std::vector<QaItem> out;
    std::set<std::string> ids;
    detail::for_each_ndjson(path, [&](const Json& j, const std::string& where) {
        out.push_back(qa_item_from_json(j, where));
        if (!ids.insert(out.back().id).second) throw DataError(where + ": duplicate id '" + out.back().id + "'");
    });
    return out;
}

inline std::vector<ProgramItem> load_program_items(const std::string& path) {
    std::vector<ProgramItem> out;
    detail::for_each_ndjson(path, [&](const Json& j, const std::string& where) {
        ProgramItem p;
        p.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        p.question = j.at("question").get<std::string>();
        p.gold_answer = j.at("gold_answer");
        if (!p.gold_answer.is_string() && !p.gold_answer.is_number())
            throw DataError(where + ": gold_answer must be a string or number");
        out.push_back(std::move(p));
    });
    return out;
}

/// Prompt with {{context}}, {{question}} and {{options}} slots.
struct QaTemplate {
    std::string system_text;
    std::string task_text;
};

inline QaTemplate default_qa_template() {
    return {"You are an expert on the General Transit Feed Specification (GTFS) static format.",
            "{{context}}Question: {{question}}\n{{options}}\n"
            "Think briefly, then give the letter of the correct option alone on the last line."};
}

inline QaTemplate default_program_template() {
    return {"You are an expert on the General Transit Feed Specification (GTFS) static format and on data "
            "processing with GTFS feeds.",
            "{{context}}Task: {{question}}\n"
            "You may reason or sketch code, but finish with a last line of the form \"Answer: <value>\"."};
}

struct CategoryTally {
    std::size_t correct = 0;
    std::size_t total = 0;
};

struct QaItemOutcome {
    std::string id;
    std::string category;
    std::string reply;
    std::optional<std::size_t> parsed;  // option index, or unset
    bool correct = false;
    std::string diagnostic;
    std::vector<std::string> context_ids;
};

struct QaReport {
    bool with_rag = false;
    std::map<std::string, CategoryTally> per_category;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<QaItemOutcome> items;
    std::string note;

    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

inline Json to_json(const QaReport& r) {
    Json cats = Json::object();
    for (const auto& [c, t] : r.per_category)
        cats[c] = {{"correct", t.correct},
                   {"total", t.total},
                   {"accuracy", t.total ? static_cast<double>(t.correct) / static_cast<double>(t.total) : 0.0}};
    Json items = Json::array();
    for (const auto& o : r.items) {
        Json j{{"id", o.id}, {"category", o.category}, {"correct", o.correct}, {"reply", o.reply}};
        if (o.parsed) j["parsed"] = *o.parsed;
        if (!o.diagnostic.empty()) j["diagnostic"] = o.diagnostic;
        if (!o.context_ids.empty()) j["context"] = o.context_ids;
        items.push_back(std::move(j));
    }
    Json j{{"with_rag", r.with_rag}, {"correct", r.correct},       {"total", r.total},
           {"accuracy", r.accuracy()}, {"per_category", std::move(cats)}, {"items", std::move(items)}};
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

/// First standalone letter A-E in the last non-empty line, else anywhere.
inline std::optional<std::size_t> parse_answer_letter(std::string_view reply) {
    auto standalone = [](std::string_view s) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < s.size(); ++i) {
            char c = s[i];
            if (c < 'A' || c > 'E') continue;
            bool left = i == 0 || !text::is_word_byte(s[i - 1]);
            bool right = i + 1 == s.size() || !text::is_word_byte(s[i + 1]);
            if (left && right) return static_cast<std::size_t>(c - 'A');
        }
        return std::nullopt;
    };
    auto lines = text::split_lines(reply);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        if (text::trim_view(*it).empty()) continue;
        if (auto l = standalone(*it)) return l;
        break;
    }
    return standalone(reply);
}

struct QaOptions {
    bool with_rag = false;
    std::size_t top_k = 3;
    int workers = 4;
    std::string model_id;
};

namespace detail {

inline std::string context_block(const VectorIndex& index, const Embedder& embedder, const std::string& query,
                                 std::size_t k, std::vector<std::string>& ids) {
    auto hits = retrieve(index, query, embedder, k);
    std::string block = "Reference documentation:\n";
    for (std::size_t i = 0; i < hits.hits.size(); ++i) {
        const auto& c = index.chunk(hits.hits[i].position);
        ids.push_back(c.id);
        block += "[" + std::to_string(i + 1) + "] " + c.text + "\n";
    }
    return block + "\n";
}

inline std::string fill(std::string tpl, const std::map<std::string, std::string>& slots) {
    // Slot values are escaped first so one cannot inject another.
    std::string out;
    std::size_t i = 0;
    while (i < tpl.size()) {
        bool hit = false;
        for (const auto& [name, value] : slots) {
            auto marker = "{{" + name + "}}";
            if (tpl.compare(i, marker.size(), marker) == 0) {
                out += value;
                i += marker.size();
                hit = true;
                break;
            }
        }
        if (!hit) out += tpl[i++];
    }
    return out;
}

template <class Item, class Fn>
void parallel_items(const std::vector<Item>& items, int workers, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < items.size();) fn(i);
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), items.size());
    if (n <= 1) {
        work();
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
}

}  // namespace detail

/// Multiple-choice benchmark with or without retrieved documentation.
inline QaReport run_qa(const std::vector<QaItem>& items, Gateway& gateway, const QaTemplate& tpl,
                       const VectorIndex* index, const Embedder* embedder, const QaOptions& opt) {
    if (opt.with_rag && (!index || !embedder))
        throw UsageError("run_qa: retrieval requested but no index/embedder provided (build one with index-docs)");
    QaReport report;
    report.with_rag = opt.with_rag;
    report.items.resize(items.size());
    detail::parallel_items(items, opt.workers, [&](std::size_t i) {
        const auto& q = items[i];
        auto& o = report.items[i];
        o.id = q.id;
        o.category = q.category;
        std::string context;
        if (opt.with_rag) context = detail::context_block(*index, *embedder, q.question, opt.top_k, o.context_ids);
        std::string options;
        for (std::size_t k = 0; k < q.options.size(); ++k)
            options += std::string(1, static_cast<char>('A' + k)) + ". " + q.options[k] + "\n";
        auto user = detail::fill(tpl.task_text, {{"context", escape_placeholders(context)},
                                                 {"question", escape_placeholders(q.question)},
                                                 {"options", escape_placeholders(options)}});
        CompletionRequest req{opt.model_id.empty() ? gateway.config().model_id : opt.model_id,
                              {{Role::system, tpl.system_text}, {Role::user, user}}, 0.0, 512};
        try {
            o.reply = gateway.complete(req).texts.front();
            o.parsed = parse_answer_letter(o.reply);
            if (!o.parsed) o.diagnostic = "no answer letter in reply";
            else if (*o.parsed >= q.options.size()) o.diagnostic = "answer letter outside the options";
            o.correct = o.parsed && *o.parsed == q.gold_index;
        } catch (const UpstreamError& e) {
            o.diagnostic = std::string("gateway error: ") + e.what();
        }
    });
    for (const auto& c : qa_categories()) report.per_category[c];
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& t = report.per_category[items[i].category];
        ++t.total;
        t.correct += report.items[i].correct;
    }
    report.total = items.size();
    for (const auto& o : report.items) report.correct += o.correct;
    return report;
}

// Programming questions are graded on the final answer value only.

inline std::string normalize_answer(std::string_view s) {
    auto t = text::to_lower(text::collapse_whitespace(s));
    auto strip = [&](std::string_view chars) {
        while (!t.empty() && chars.find(t.front()) != std::string_view::npos) t.erase(t.begin());
        while (!t.empty() && chars.find(t.back()) != std::string_view::npos) t.pop_back();
    };
    strip(" \t\"'`*.,;:!");
    return t;
}

inline std::optional<double> as_number(const Json& v) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) return detail::parse_double(v.get<std::string>());
    return std::nullopt;
}

/// Last decimal number in a string ("about 2.50 km" -> 2.5).
inline std::optional<double> last_number(std::string_view s) {
    std::optional<double> found;
    std::size_t i = 0;
    while (i < s.size()) {
        bool starts = std::isdigit(static_cast<unsigned char>(s[i])) ||
                      (s[i] == '-' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])));
        if (!starts || (i > 0 && (text::is_word_byte(s[i - 1]) || s[i - 1] == '.'))) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.')) ++j;
        auto tok = s.substr(i, j - i);
        while (!tok.empty() && tok.back() == '.') tok.remove_suffix(1);
        if (auto v = detail::parse_double(tok)) found = v;
        i = j;
    }
    return found;
}

inline bool grade_program_answer(const Json& gold, std::string_view reply) {
    std::string_view answer = reply;
    auto lower = text::to_lower(reply);
    if (auto pos = lower.rfind("answer"); pos != std::string::npos) {
        auto rest = reply.substr(pos + 6);
        auto colon = rest.find_first_of(":=");
        if (colon != std::string_view::npos && colon < 4) rest = rest.substr(colon + 1);
        else if (auto is = text::to_lower(rest).find(" is "); is != std::string::npos && is < 3) rest = rest.substr(is + 4);
        answer = rest.substr(0, rest.find('\n'));
    }
    if (auto g = as_number(gold)) {
        auto got = last_number(answer);
        if (!got) return false;
        const double scale = std::max(std::abs(*g), 1e-12);
        return std::abs(*got - *g) <= 1e-6 * scale || (*g == 0.0 && std::abs(*got) <= 1e-12);
    }
    auto want = normalize_answer(gold.get<std::string>());
    if (want.empty()) return false;
    auto have = normalize_answer(answer);
    if (have == want) return true;
    // token match: gold appears delimited by non-identifier characters
    auto ident = [](char c) { return text::is_word_byte(c) || c == '_'; };
    for (auto pos = have.find(want); pos != std::string::npos; pos = have.find(want, pos + 1)) {
        bool left = pos == 0 || !ident(have[pos - 1]);
        auto end = pos + want.size();
        bool right = end == have.size() || !(ident(have[end]) || have[end] == '.');
        if (left && right) return true;
    }
    return false;
}

inline QaReport score_program_answers(const std::vector<ProgramItem>& items, Gateway& gateway, const QaTemplate& tpl,
                                      const VectorIndex* index, const Embedder* embedder, const QaOptions& opt) {
    if (opt.with_rag && (!index || !embedder))
        throw UsageError("score_program_answers: retrieval requested but no index/embedder provided");
    QaReport report;
    report.with_rag = opt.with_rag;
    report.note = "graded by final answer value; generated code is not executed";
    report.items.resize(items.size());
    detail::parallel_items(items, opt.workers, [&](std::size_t i) {
        const auto& p = items[i];
        auto& o = report.items[i];
        o.id = p.id;
        o.category = "programming";
        std::string context;
        if (opt.with_rag) context = detail::context_block(*index, *embedder, p.question, opt.top_k, o.context_ids);
        auto user = detail::fill(tpl.task_text, {{"context", escape_placeholders(context)},
                                                 {"question", escape_placeholders(p.question)}});
        CompletionRequest req{opt.model_id.empty() ? gateway.config().model_id : opt.model_id,
                              {{Role::system, tpl.system_text}, {Role::user, user}}, 0.0, 1024};
        try {
            o.reply = gateway.complete(req).texts.front();
            o.correct = grade_program_answer(p.gold_answer, o.reply);
        } catch (const UpstreamError& e) {
            o.diagnostic = std::string("gateway error: ") + e.what();
        }
    });
    auto& t = report.per_category["programming"];
    t.total = items.size();
    for (const auto& o : report.items) t.correct += o.correct;
    report.total = t.total;
    report.correct = t.correct;
    return report;
}

}  // namespace tpulse
