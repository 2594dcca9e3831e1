#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentstat/series.hpp"

namespace latentstat {

// ============================================================================
// Raw CSV (RFC 4180)
// ============================================================================

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Quoted fields may contain commas, doubled quotes, and newlines. CRLF and
/// a missing final newline are both tolerated.
inline CsvTable parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false, any = false;
    std::size_t i = 0;
    const std::size_t n = text.size();
    auto end_field = [&] {
        record.push_back(field);
        field.clear();
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
        any = false;
    };
    while (i < n) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < n && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                } else {
                    quoted = false;
                    ++i;
                }
            } else {
                field += c;
                ++i;
            }
            continue;
        }
        switch (c) {
            case '"':
                quoted = true;
                any = true;
                ++i;
                break;
            case ',':
                end_field();
                any = true;
                ++i;
                break;
            case '\r':
                ++i;
                break;
            case '\n':
                if (any || !field.empty() || !record.empty()) end_record();
                ++i;
                break;
            default:
                field += c;
                any = true;
                ++i;
                break;
        }
    }
    if (quoted) throw std::invalid_argument("csv: unterminated quoted field");
    if (any || !field.empty() || !record.empty()) end_record();
    if (records.empty()) throw std::invalid_argument("csv: empty file");
    CsvTable table;
    table.header = std::move(records.front());
    table.rows.assign(std::make_move_iterator(records.begin() + 1),
                      std::make_move_iterator(records.end()));
    return table;
}

inline std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

// ============================================================================
// Numeric cleaning
// ============================================================================

/// Parses one raw cell into a double. Strips surrounding whitespace and
/// thousands separators, honors K/M/B magnitude suffixes and a trailing %
/// (value stays in percent units). Returns false for missing markers ("", "-")
/// and anything unparseable.
inline bool clean_number(const std::string& raw, double& out) {
    std::size_t b = 0, e = raw.size();
    while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
    std::string s = raw.substr(b, e - b);
    if (s.empty() || s == "-") return false;
    double scale = 1.0;
    if (s.back() == '%') {
        s.pop_back();
    } else if (s.back() == 'K' || s.back() == 'k') {
        scale = 1e3;
        s.pop_back();
    } else if (s.back() == 'M' || s.back() == 'm') {
        scale = 1e6;
        s.pop_back();
    } else if (s.back() == 'B' || s.back() == 'b') {
        scale = 1e9;
        s.pop_back();
    }
    s.erase(std::remove(s.begin(), s.end(), ','), s.end());
    if (s.empty()) return false;
    char* endp = nullptr;
    double v = std::strtod(s.c_str(), &endp);
    if (endp != s.c_str() + s.size()) return false;
    out = v * scale;
    return std::isfinite(out);
}

// ============================================================================
// Schemas
// ============================================================================

struct CsvSchema {
    std::string name;
    std::string date_column;
    /// Empty means "every non-date, non-dropped column" (the generic schema).
    std::vector<std::string> numeric_columns;
    std::vector<std::string> drop_columns;
    bool requires_symbol = false;
    std::string symbol_column;
};

inline const std::vector<CsvSchema>& builtin_schemas() {
    static const std::vector<CsvSchema> schemas = {
        {"djia",
         "Date",
         {"Price", "Open", "High", "Low", "Vol.", "Change %"},
         {},
         false,
         ""},
        {"nifty50",
         "Date",
         {"Prev Close", "Open", "High", "Low", "Last", "Close", "VWAP", "Volume", "Turnover",
          "Trades", "Deliverable Volume", "%Deliverable"},
         {"Series"},
         true,
         "Symbol"},
        {"generic", "Date", {}, {}, false, ""},
    };
    return schemas;
}

inline const CsvSchema& find_schema(const std::string& name) {
    std::string names;
    for (const CsvSchema& s : builtin_schemas()) {
        if (s.name == name) return s;
        if (!names.empty()) names += ", ";
        names += s.name;
    }
    throw std::invalid_argument("unknown schema '" + name + "' (available: " + names + ")");
}

// ============================================================================
// Ingest
// ============================================================================

struct IngestReport {
    std::size_t rows_in = 0;
    std::size_t rows_kept = 0;
    std::size_t rows_dropped = 0;
    std::vector<std::string> warnings;
};

/// Parses CSV text into a date-indexed Frame under a schema. Rows with any
/// unparseable retained cell are dropped and counted; more than 5% dropped is
/// treated as a schema mismatch. Output rows are sorted ascending by date.
inline Frame ingest_csv(const std::string& text, const CsvSchema& schema,
                        const std::string& symbol = "", IngestReport* report = nullptr) {
    CsvTable table = parse_csv(text);
    std::map<std::string, std::size_t> col;
    for (std::size_t j = 0; j < table.header.size(); ++j) col[table.header[j]] = j;

    auto require = [&](const std::string& name) {
        auto it = col.find(name);
        if (it == col.end())
            throw std::invalid_argument("schema '" + schema.name + "': missing column '" + name +
                                        "' in header");
        return it->second;
    };
    std::size_t date_idx = require(schema.date_column);

    std::size_t symbol_idx = 0;
    if (schema.requires_symbol) {
        if (symbol.empty())
            throw std::invalid_argument("schema '" + schema.name + "' requires a symbol filter");
        symbol_idx = require(schema.symbol_column);
    }

    std::vector<std::string> numeric_names = schema.numeric_columns;
    if (numeric_names.empty()) {
        for (const std::string& h : table.header) {
            if (h == schema.date_column) continue;
            if (schema.requires_symbol && h == schema.symbol_column) continue;
            if (std::find(schema.drop_columns.begin(), schema.drop_columns.end(), h) !=
                schema.drop_columns.end())
                continue;
            numeric_names.push_back(h);
        }
        if (numeric_names.empty())
            throw std::invalid_argument("schema '" + schema.name + "': no numeric columns found");
    }
    std::vector<std::size_t> numeric_idx;
    for (const std::string& name : numeric_names) numeric_idx.push_back(require(name));

    struct Row {
        Date date;
        std::vector<double> values;
    };
    std::vector<Row> rows;
    IngestReport rep;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const std::vector<std::string>& cells = table.rows[r];
        if (cells.size() != table.header.size())
            throw std::invalid_argument("csv row " + std::to_string(r + 2) + " has " +
                                        std::to_string(cells.size()) + " fields, header has " +
                                        std::to_string(table.header.size()));
        if (schema.requires_symbol && cells[symbol_idx] != symbol) continue;
        ++rep.rows_in;
        Row row;
        if (!parse_date(cells[date_idx], row.date)) {
            ++rep.rows_dropped;
            rep.warnings.push_back("row " + std::to_string(r + 2) + ": unparseable date '" +
                                   cells[date_idx] + "'");
            continue;
        }
        bool ok = true;
        for (std::size_t j = 0; j < numeric_idx.size(); ++j) {
            double v = 0.0;
            if (!clean_number(cells[numeric_idx[j]], v)) {
                ++rep.rows_dropped;
                rep.warnings.push_back("row " + std::to_string(r + 2) + ": unparseable '" +
                                       numeric_names[j] + "' cell '" + cells[numeric_idx[j]] +
                                       "'");
                ok = false;
                break;
            }
            row.values.push_back(v);
        }
        if (ok) rows.push_back(std::move(row));
    }
    rep.rows_kept = rows.size();
    if (rep.rows_in == 0)
        throw std::invalid_argument(schema.requires_symbol
                                        ? "no rows matched symbol '" + symbol + "'"
                                        : "csv has a header but no data rows");
    if (rep.rows_dropped * 20 > rep.rows_in)
        throw std::runtime_error("dropped " + std::to_string(rep.rows_dropped) + " of " +
                                 std::to_string(rep.rows_in) +
                                 " rows (> 5%); schema '" + schema.name +
                                 "' likely does not match this file");

    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (!(rows[i - 1].date < rows[i].date))
            throw std::invalid_argument("duplicate date " + rows[i].date.iso() + " in input");

    std::vector<Date> index;
    for (const Row& r : rows) index.push_back(r.date);
    Frame frame;
    frame.set_index(index);
    for (std::size_t j = 0; j < numeric_names.size(); ++j) {
        std::vector<double> vals(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = rows[i].values[j];
        frame.add_column(Series(std::move(vals), numeric_names[j]));
    }
    if (report) *report = rep;
    return frame;
}

inline Frame load_csv(const std::string& path, const CsvSchema& schema,
                      const std::string& symbol = "", IngestReport* report = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return ingest_csv(buf.str(), schema, symbol, report);
}

// ============================================================================
// Canonical writer (round-trip exact)
// ============================================================================

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string write_canonical_csv(const Frame& frame) {
    std::string out = "Date";
    for (const auto& col : frame.columns()) out += "," + csv_quote(col.name);
    out += "\n";
    for (std::size_t i = 0; i < frame.rows(); ++i) {
        out += frame.index()[i].iso();
        for (const auto& col : frame.columns()) out += "," + format_double(col.values[i]);
        out += "\n";
    }
    return out;
}

inline void write_canonical_csv(const std::string& path, const Frame& frame) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << write_canonical_csv(frame);
}

/// Reads a file produced by write_canonical_csv (ISO dates, plain doubles).
inline Frame read_canonical_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    CsvSchema generic = find_schema("generic");
    return ingest_csv(buf.str(), generic);
}

}  // namespace latentstat
