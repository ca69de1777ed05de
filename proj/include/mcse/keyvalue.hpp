#pragma once

// Line-oriented "key = value" documents with optional whitespace tables.
//
//   # comment
//   base_mva = 10
//   [bus]
//   1  0  0  0  0
//
// Shared by the case format, the calibration file and the run configs.

#include <charconv>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"

namespace mcse {

namespace text {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    for (std::string tok; in >> tok;)
        out.push_back(tok);
    return out;
}

inline std::optional<double> to_double(std::string_view s) {
    s = trim(s);
    double value = 0.0;
    const auto *end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc{} || ptr != end)
        return std::nullopt;
    return value;
}

inline std::optional<long long> to_integer(std::string_view s) {
    s = trim(s);
    long long value = 0;
    const auto *end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc{} || ptr != end)
        return std::nullopt;
    return value;
}

inline double parse_double(std::string_view s, int line, const std::string &field) {
    if (auto v = to_double(s))
        return *v;
    throw ParseError("expected a number, got '" + std::string(s) + "'", line, field);
}

inline long long parse_integer(std::string_view s, int line, const std::string &field) {
    if (auto v = to_integer(s))
        return *v;
    throw ParseError("expected an integer, got '" + std::string(s) + "'", line, field);
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

} // namespace text

struct TableRow {
    int line = 0;
    std::vector<std::string> fields;
};

class KeyValueDocument {
public:
    static KeyValueDocument parse(std::string_view text) {
        KeyValueDocument doc;
        std::string current_table;
        int line_no = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            auto nl = text.find('\n', pos);
            if (nl == std::string_view::npos)
                nl = text.size();
            auto line = text.substr(pos, nl - pos);
            pos = nl + 1;
            ++line_no;

            if (auto hash = line.find('#'); hash != std::string_view::npos)
                line = line.substr(0, hash);
            line = text::trim(line);
            if (line.empty())
                continue;

            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ParseError("unterminated section header", line_no);
                current_table = std::string(text::trim(line.substr(1, line.size() - 2)));
                if (current_table.empty())
                    throw ParseError("empty section name", line_no);
                if (doc.tables_.count(current_table))
                    throw ParseError("duplicate section", line_no, current_table);
                doc.tables_[current_table];
                doc.table_order_.push_back(current_table);
                continue;
            }

            if (auto eq = line.find('='); eq != std::string_view::npos) {
                std::string key(text::trim(line.substr(0, eq)));
                std::string value(text::trim(line.substr(eq + 1)));
                if (key.empty())
                    throw ParseError("missing key before '='", line_no);
                if (doc.values_.count(key))
                    throw ParseError("duplicate key", line_no, key);
                doc.values_[key] = {std::move(value), line_no};
                doc.key_order_.push_back(key);
                continue;
            }

            if (current_table.empty())
                throw ParseError("table row outside of a section", line_no);
            doc.tables_[current_table].push_back({line_no, text::split_ws(line)});
        }
        return doc;
    }

    bool has(const std::string &key) const { return values_.count(key) != 0; }

    const std::string &get(const std::string &key) const {
        auto it = values_.find(key);
        if (it == values_.end())
            throw ParseError("missing required key", 0, key);
        return it->second.value;
    }

    std::string get_or(const std::string &key, const std::string &fallback) const {
        return has(key) ? get(key) : fallback;
    }

    int line_of(const std::string &key) const {
        auto it = values_.find(key);
        return it == values_.end() ? 0 : it->second.line;
    }

    double get_double(const std::string &key) const {
        return text::parse_double(get(key), line_of(key), key);
    }

    double get_double_or(const std::string &key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    long long get_integer_or(const std::string &key, long long fallback) const {
        return has(key) ? text::parse_integer(get(key), line_of(key), key) : fallback;
    }

    bool get_bool_or(const std::string &key, bool fallback) const {
        if (!has(key))
            return fallback;
        const auto &v = get(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on")
            return true;
        if (v == "false" || v == "0" || v == "no" || v == "off")
            return false;
        throw ParseError("expected a boolean, got '" + v + "'", line_of(key), key);
    }

    bool has_table(const std::string &name) const { return tables_.count(name) != 0; }

    const std::vector<TableRow> &table(const std::string &name) const {
        static const std::vector<TableRow> empty;
        auto it = tables_.find(name);
        return it == tables_.end() ? empty : it->second;
    }

    const std::vector<std::string> &keys() const { return key_order_; }

private:
    struct Entry {
        std::string value;
        int line = 0;
    };
    std::map<std::string, Entry> values_;
    std::vector<std::string> key_order_;
    std::map<std::string, std::vector<TableRow>> tables_;
    std::vector<std::string> table_order_;
};

} // namespace mcse
