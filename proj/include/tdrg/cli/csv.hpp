#pragma once

/// Trace CSV: header row, comma separator, LF line endings, shortest
/// round-trip decimal formatting (at most 17 significant digits), so a
/// re-parsed trace is bit-identical. NaN is written as "nan".

#include "tdrg/errors.hpp"
#include "tdrg/scenario.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace tdrg::cli {

inline std::string format_number(double x) {
    if (std::isnan(x))
        return "nan";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
    if (s == "nan")
        return std::numeric_limits<double>::quiet_NaN();
    double x = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw InvalidArgument("csv: not a number: '" + std::string(s) + "'");
    return x;
}

inline void write_row(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i)
            os << ',';
        os << cells[i];
    }
    os << '\n';
}

/// Writes every `decimation`-th row of the trace (always starting at row 0).
inline void write_trace(std::ostream& os, const Trace& tr, int decimation = 1) {
    if (decimation < 1)
        throw InvalidArgument("csv: decimation must be at least 1");
    write_row(os, tr.columns());
    std::string line;
    for (std::size_t k = 0; k < tr.rows(); k += static_cast<std::size_t>(decimation)) {
        line.clear();
        for (int c = 0; c < tr.width(); ++c) {
            if (c)
                line += ',';
            line += format_number(tr.at(k, c));
        }
        line += '\n';
        os << line;
    }
}

inline void write_trace_file(const std::string& path, const Trace& tr, int decimation = 1) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot open '" + path + "' for writing");
    write_trace(out, tr, decimation);
    if (!out)
        throw Error("write to '" + path + "' failed");
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos)
            return out;
        start = comma + 1;
    }
}

/// Parses a numeric CSV with a header row.
inline CsvTable read_csv(std::string_view text) {
    CsvTable table;
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos)
            eol = text.size();
        const std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty())
            continue;
        const auto cells = split_commas(line);
        if (first) {
            for (auto c : cells)
                table.header.emplace_back(c);
            first = false;
            continue;
        }
        if (cells.size() != table.header.size())
            throw InvalidArgument("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                                  std::to_string(table.header.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (auto c : cells)
            row.push_back(parse_number(c));
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace tdrg::cli
