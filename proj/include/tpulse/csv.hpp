#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tpulse/error.hpp"
#include "tpulse/text.hpp"

namespace tpulse::csv {

struct Row {
    std::size_t number = 0;  // 1-based record number; the header is record 1
    std::vector<std::string> fields;
};

struct Table {
    std::vector<std::string> header;
    std::vector<Row> rows;

    /// Column index by case-insensitive name.
    std::optional<std::size_t> column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (text::iequals(text::trim_view(header[i]), name)) return i;
        return std::nullopt;
    }
};

struct Dialect {
    char delimiter = ',';
    bool quoting = true;  // RFC 4180 double-quote handling
};

/// Parse a whole document. Quoted fields may span lines; "" is an escaped quote.
/// A leading UTF-8 BOM is skipped. Blank lines are ignored.
inline Table parse(std::string_view doc, Dialect dialect = {}) {
    if (doc.size() >= 3 && doc.substr(0, 3) == "\xEF\xBB\xBF") doc.remove_prefix(3);

    std::vector<Row> records;
    Row current;
    std::string field;
    bool in_quotes = false;
    bool field_was_quoted = false;
    bool record_has_content = false;
    std::size_t record_no = 0;

    auto end_field = [&] {
        current.fields.push_back(std::move(field));
        field.clear();
        field_was_quoted = false;
    };
    auto end_record = [&] {
        end_field();
        ++record_no;
        bool blank = current.fields.size() == 1 && current.fields[0].empty() && !record_has_content;
        if (!blank) {
            current.number = record_no;
            records.push_back(std::move(current));
        } else {
            --record_no;
        }
        current = Row{};
        record_has_content = false;
    };

    for (std::size_t i = 0; i < doc.size(); ++i) {
        char c = doc[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < doc.size() && doc[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (dialect.quoting && c == '"' && field.empty() && !field_was_quoted) {
            in_quotes = true;
            field_was_quoted = true;
            record_has_content = true;
        } else if (c == dialect.delimiter) {
            record_has_content = true;
            end_field();
        } else if (c == '\r') {
            if (i + 1 < doc.size() && doc[i + 1] == '\n') continue;
            end_record();
        } else if (c == '\n') {
            end_record();
        } else {
            record_has_content = true;
            field.push_back(c);
        }
    }
    if (in_quotes)
        throw DataError("csv: unterminated quoted field in record " + std::to_string(record_no + 1));
    if (!field.empty() || !current.fields.empty() || record_has_content) end_record();

    Table table;
    if (records.empty()) return table;
    table.header = std::move(records.front().fields);
    for (auto& h : table.header) h = text::trim(h);
    table.rows.assign(std::make_move_iterator(records.begin() + 1), std::make_move_iterator(records.end()));
    return table;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Table read(const std::string& path, Dialect dialect = {}) { return parse(read_file(path), dialect); }

inline std::string escape(std::string_view field) {
    bool needs = field.find_first_of(",\"\r\n") != std::string_view::npos;
    if (!needs) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string format_row(const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line.push_back(',');
        line += escape(fields[i]);
    }
    line.push_back('\n');
    return line;
}

}  // namespace tpulse::csv
