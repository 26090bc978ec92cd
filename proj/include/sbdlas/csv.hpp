#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "sbdlas/pcn.hpp"

namespace sbdlas {

/// Shortest decimal form that round-trips through binary64.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    if (res.ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, res.ptr);
}

/// Quotes a field when it contains a comma, quote, or line break (RFC 4180).
inline std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out;
    out.reserve(field.size() + 2);
    out += '"';
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline void write_csv_row(std::ostream& os, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) os << ',';
        os << csv_escape(fields[i]);
    }
    os << "\r\n";
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_csv: cannot open " + path);
    write_csv_row(os, header);
    for (const auto& row : rows) write_csv_row(os, row);
    if (!os) throw std::runtime_error("write_csv: write failed for " + path);
}

/// Full RFC 4180 parser: quoted fields may hold commas, escaped quotes, and
/// line breaks. Accepts LF or CRLF row endings.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& is) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false, any = false;
    for (int c = is.get(); c != std::istream::traits_type::eof(); c = is.get()) {
        if (in_quotes) {
            if (c == '"') {
                if (is.peek() == '"') {
                    field += '"';
                    is.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field += static_cast<char>(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field.empty()) throw std::runtime_error("parse_csv: quote inside bare field");
                in_quotes = true;
                any = true;
                break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                any = true;
                break;
            case '\r': break;
            case '\n':
                row.push_back(std::move(field));
                field.clear();
                rows.push_back(std::move(row));
                row.clear();
                any = false;
                break;
            default:
                field += static_cast<char>(c);
                any = true;
        }
    }
    if (in_quotes) throw std::runtime_error("parse_csv: unterminated quoted field");
    if (any || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_csv: cannot open " + path);
    return parse_csv(is);
}

/// One row per chain step: index, potential of the current state, and whether
/// the proposal at that step was accepted.
inline void write_chain_trace(const std::string& path, const ChainResult& chain) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(static_cast<std::size_t>(chain.potential_trace.size()));
    for (Eigen::Index s = 0; s < chain.potential_trace.size(); ++s)
        rows.push_back({std::to_string(s + 1), format_double(chain.potential_trace[s]),
                        chain.accepted[static_cast<std::size_t>(s)] ? "1" : "0"});
    write_csv(path, {"step", "potential", "accepted"}, rows);
}

} // namespace sbdlas
