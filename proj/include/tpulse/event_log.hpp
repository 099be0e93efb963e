#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <unistd.h>

#include "tpulse/error.hpp"
#include "tpulse/json_io.hpp"

namespace tpulse {

struct ReplayReport {
    std::uint64_t applied = 0;
    std::uint64_t last_seq = 0;
    std::uint64_t snapshot_seq = 0;
    std::optional<std::uint64_t> corrupt_offset;  // byte offset of the first bad line
    std::string message;
};

/// Append-only newline-delimited JSON log with sequence numbers, plus an
/// optional snapshot of the state at some sequence number.
///
///   <dir>/events.ndjson   one {"seq":n,"type":...} object per line
///   <dir>/snapshot.json   {"seq":n,"state":{...}}
class EventLog {
public:
    explicit EventLog(std::filesystem::path dir, bool sync = true) : dir_(std::move(dir)), sync_(sync) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec || !std::filesystem::is_directory(dir_))
            throw DataError("data directory '" + dir_.string() + "' is not usable: " + ec.message());
    }
    ~EventLog() {
        if (out_) std::fclose(out_);
    }
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;

    std::filesystem::path events_path() const { return dir_ / "events.ndjson"; }
    std::filesystem::path snapshot_path() const { return dir_ / "snapshot.json"; }
    std::uint64_t last_seq() const noexcept { return last_seq_; }

    std::optional<Json> load_snapshot() const {
        if (!std::filesystem::exists(snapshot_path())) return std::nullopt;
        auto j = read_json_file(snapshot_path().string());
        if (!j.is_object() || !j.contains("seq") || !j.contains("state"))
            throw DataError("snapshot '" + snapshot_path().string() + "' is malformed");
        return j;
    }

    /// Feeds events with seq > after_seq to apply, in order. Stops at the first
    /// line that is truncated, unparseable or out of sequence, reports its
    /// offset and cuts the file there so later appends start clean.
    template <class Apply>
    ReplayReport replay(std::uint64_t after_seq, Apply&& apply) {
        ReplayReport rep;
        rep.snapshot_seq = after_seq;
        last_seq_ = after_seq;
        std::ifstream in(events_path(), std::ios::binary);
        if (in) {
            std::stringstream ss;
            ss << in.rdbuf();
            const std::string doc = ss.str();
            std::size_t pos = 0;
            std::uint64_t expected = 0;
            bool first = true;
            while (pos < doc.size()) {
                auto nl = doc.find('\n', pos);
                auto fail = [&](const std::string& why) {
                    rep.corrupt_offset = pos;
                    rep.message = "event log: " + why + " at byte " + std::to_string(pos) + "; replay stopped";
                };
                if (nl == std::string::npos) {
                    fail("truncated final line");
                    break;
                }
                Json ev = Json::parse(std::string_view(doc).substr(pos, nl - pos), nullptr, false);
                if (ev.is_discarded() || !ev.is_object() || !ev.contains("seq") || !ev["seq"].is_number_unsigned() ||
                    !ev.contains("type")) {
                    fail("unparseable line");
                    break;
                }
                const auto seq = ev["seq"].get<std::uint64_t>();
                if (!first && seq != expected) {
                    fail("sequence gap (expected " + std::to_string(expected) + ", found " + std::to_string(seq) + ")");
                    break;
                }
                first = false;
                expected = seq + 1;
                if (seq > after_seq) {
                    if (seq != last_seq_ + 1) {
                        fail("sequence gap after snapshot");
                        break;
                    }
                    apply(ev);
                    last_seq_ = seq;
                    ++rep.applied;
                }
                pos = nl + 1;
            }
            in.close();
            if (rep.corrupt_offset) std::filesystem::resize_file(events_path(), *rep.corrupt_offset);
        }
        rep.last_seq = last_seq_;
        return rep;
    }

    /// Stamps the next sequence number on ev and appends it durably.
    std::uint64_t append(Json& ev) {
        if (!out_) {
            out_ = std::fopen(events_path().c_str(), "ab");
            if (!out_) throw DataError("cannot open event log '" + events_path().string() + "' for append");
        }
        ev["seq"] = last_seq_ + 1;
        const auto line = ev.dump() + "\n";
        if (std::fwrite(line.data(), 1, line.size(), out_) != line.size() || std::fflush(out_) != 0)
            throw DataError("event log write failed");
        if (sync_) ::fsync(::fileno(out_));
        return ++last_seq_;
    }

    void write_snapshot(const Json& state) const {
        Json j{{"seq", last_seq_}, {"state", state}};
        auto tmp = snapshot_path();
        tmp += ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << j.dump();
            if (!out) throw DataError("snapshot write failed");
        }
        std::filesystem::rename(tmp, snapshot_path());
    }

private:
    std::filesystem::path dir_;
    bool sync_;
    std::FILE* out_ = nullptr;
    std::uint64_t last_seq_ = 0;
};

}  // namespace tpulse
