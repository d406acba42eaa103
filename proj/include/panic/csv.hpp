//
// Minimal CSV reading/writing: header row + string cells, comma separated.
// Cells are written raw (callers guarantee no embedded commas); numeric
// cells use %.17g so doubles round-trip exactly.
//

#pragma once

#include <panic/types.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace panic {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    Index col(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<Index>(i);
        throw DataError("missing CSV column '" + name + "'");
    }
};

inline std::string csv_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() && in.eof()) break;
        auto cells = split_csv_line(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size())
                throw DataError("CSV row with " + std::to_string(cells.size()) +
                                " cells, expected " + std::to_string(t.header.size()) + " in " +
                                path);
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw DataError("empty CSV file: " + path);
    return t;
}

inline void write_csv(const std::string& path, const CsvTable& t) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write CSV file: " + path);
    auto write_row = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << row[i];
        }
        out << '\n';
    };
    write_row(t.header);
    for (const auto& r : t.rows) write_row(r);
    if (!out) throw DataError("failed writing CSV file: " + path);
}

}  // namespace panic
