//
// Flat structured-text format used for configs, schema files, volume
// headers and standardization stats: one `key = value` pair per line,
// '#' starts a comment, insertion order preserved on write.
//

#pragma once

#include <panic/types.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace panic {

class KvMap {
public:
    void set(const std::string& key, const std::string& value) {
        auto it = index_.find(key);
        if (it == index_.end()) {
            index_[key] = items_.size();
            items_.emplace_back(key, value);
        } else {
            items_[it->second].second = value;
        }
    }
    void set_double(const std::string& key, double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        set(key, buf);
    }
    void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
    void set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

    bool has(const std::string& key) const { return index_.count(key) > 0; }

    const std::string& get(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw ConfigError("missing key '" + key + "'");
        return items_[it->second].second;
    }
    std::string get_or(const std::string& key, const std::string& fallback) const {
        auto it = index_.find(key);
        return it == index_.end() ? fallback : items_[it->second].second;
    }
    double get_double(const std::string& key) const { return parse_double(key, get(key)); }
    double get_double_or(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }
    long long get_int(const std::string& key) const { return parse_int(key, get(key)); }
    long long get_int_or(const std::string& key, long long fallback) const {
        return has(key) ? get_int(key) : fallback;
    }
    bool get_bool_or(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string& v = get(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("key '" + key + "' is not a boolean: '" + v + "'");
    }

    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

    void parse(const std::string& text, const std::string& origin = "<string>") {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip_comment(line);
            s = trim(s);
            if (s.empty()) continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + s + "'");
            std::string key = trim(s.substr(0, eq));
            std::string value = trim(s.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            set(key, value);
        }
    }

    static KvMap load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open '" + path + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        KvMap m;
        m.parse(buf.str(), path);
        return m;
    }

    std::string serialize() const {
        std::string out;
        for (const auto& [k, v] : items_) {
            out += k;
            out += " = ";
            out += v;
            out += "\n";
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw DataError("cannot write '" + path + "'");
        out << serialize();
        if (!out) throw DataError("write failed for '" + path + "'");
    }

    static std::string trim(const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        std::size_t e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

private:
    static std::string strip_comment(const std::string& s) {
        auto pos = s.find('#');
        return pos == std::string::npos ? s : s.substr(0, pos);
    }
    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' is not a number: '" + v + "'");
        }
    }
    static long long parse_int(const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            long long i = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return i;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' is not an integer: '" + v + "'");
        }
    }

    std::vector<std::pair<std::string, std::string>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace panic
