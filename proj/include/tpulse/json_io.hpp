#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "tpulse/error.hpp"

namespace tpulse {

using Json = nlohmann::json;

inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw DataError(path + ": invalid JSON: " + e.what());
    }
}

inline void write_json_file(const std::string& path, const Json& doc) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << doc.dump(2) << '\n';
}

/// Stable text form: sorted keys, no whitespace.
inline std::string canonical_dump(const Json& doc) { return doc.dump(-1, ' ', false, Json::error_handler_t::replace); }

}  // namespace tpulse
