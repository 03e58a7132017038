#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace logitgc {

using json = nlohmann::ordered_json;

// Errors in user-supplied files and configuration (CLI exit code 1 territory,
// as opposed to runtime/numerical failures).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline void require_format_version(const json& j, int expected, const std::string& what) {
    if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
        throw ConfigError(what + ": missing format_version");
    }
    const int got = j["format_version"].get<int>();
    if (got != expected) {
        throw ConfigError(what + ": unsupported format_version " + std::to_string(got) +
                          " (this reader understands version " + std::to_string(expected) + ")");
    }
}

// Shortest decimal that round-trips the exact double.
inline std::string format_full(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("format_full: conversion failed");
    return std::string(buf, ptr);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_strict_double(const std::string& s, const std::string& where) {
    double v = 0.0;
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError(where + ": malformed number '" + s + "'");
    }
    if (!std::isfinite(v)) {
        throw ConfigError(where + ": non-finite value '" + s + "'");
    }
    return v;
}

}  // namespace detail

inline json matrix_to_json(const std::vector<double>& flat, std::size_t rows, std::size_t cols) {
    json out = json::array();
    for (std::size_t i = 0; i < rows; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < cols; ++j) row.push_back(flat[i * cols + j]);
        out.push_back(std::move(row));
    }
    return out;
}

inline std::vector<double> matrix_from_json(const json& j, std::size_t rows, std::size_t cols,
                                            const std::string& what) {
    if (!j.is_array() || j.size() != rows) {
        throw ConfigError(what + ": expected " + std::to_string(rows) + " rows");
    }
    std::vector<double> flat;
    flat.reserve(rows * cols);
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != cols) {
            throw ConfigError(what + ": expected rows of " + std::to_string(cols) + " values");
        }
        for (const auto& v : row) flat.push_back(v.get<double>());
    }
    return flat;
}

}  // namespace logitgc
