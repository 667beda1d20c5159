#pragma once

// Flat typed key/value configuration in a TOML subset: `key = value` lines,
// `[section]` headers that prefix keys as "section.key", and `#` comments.
// Values are strings ("..."), booleans, integers or floats.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>

#include "cotext/error.hpp"

namespace cotext {

using ConfigValue = std::variant<bool, std::int64_t, double, std::string>;

class Config {
public:
    Config() = default;

    static Config parse(std::string_view text) {
        Config c;
        std::string section;
        std::size_t lineno = 0;
        std::istringstream in{std::string(text)};
        std::string raw;
        while (std::getline(in, raw)) {
            ++lineno;
            const std::string line = trim(strip_comment(raw));
            if (line.empty()) continue;
            const auto where = "line " + std::to_string(lineno);
            if (line.front() == '[') {
                if (line.back() != ']' || line.size() < 3) throw Error(ErrorCode::format_error, where + ": bad section header");
                section = trim(line.substr(1, line.size() - 2));
                if (!valid_key(section)) throw Error(ErrorCode::format_error, where + ": bad section name");
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw Error(ErrorCode::format_error, where + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            if (!valid_key(key)) throw Error(ErrorCode::format_error, where + ": bad key '" + key + "'");
            const std::string full = section.empty() ? key : section + "." + key;
            if (c.values_.contains(full)) throw Error(ErrorCode::format_error, where + ": duplicate key '" + full + "'");
            c.values_[full] = parse_value(trim(line.substr(eq + 1)), where);
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::io_failure, "cannot read config " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        Config c = parse(ss.str());
        c.base_dir_ = std::filesystem::absolute(path).parent_path().string();
        return c;
    }

    /// Applies "key=value" with the value parsed by the same rules as the file,
    /// except that a bare word is taken as a string.
    void set(std::string_view assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string_view::npos) throw Error(ErrorCode::invalid_config, "override must be key=value");
        const std::string key = trim(std::string(assignment.substr(0, eq)));
        if (!valid_key(key)) throw Error(ErrorCode::invalid_config, "bad override key '" + key + "'");
        const std::string value = trim(std::string(assignment.substr(eq + 1)));
        try {
            values_[key] = parse_value(value, "override");
        } catch (const Error&) {
            values_[key] = value;
        }
    }

    void set(const std::string& key, ConfigValue v) { values_[key] = std::move(v); }

    bool has(const std::string& key) const { return values_.contains(key); }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
        throw type_error(key, "an integer");
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* v = std::get_if<double>(&it->second)) return *v;
        if (auto* v = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*v);
        throw type_error(key, "a number");
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* v = std::get_if<bool>(&it->second)) return *v;
        throw type_error(key, "a boolean");
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* v = std::get_if<std::string>(&it->second)) return *v;
        throw type_error(key, "a string");
    }

    std::string require_string(const std::string& key) const {
        if (!has(key)) throw Error(ErrorCode::invalid_config, "missing config key '" + key + "'");
        return get_string(key, {});
    }

    /// A path value resolved against the directory of the loaded file.
    std::string get_path(const std::string& key, const std::string& fallback) const {
        const std::string p = get_string(key, fallback);
        if (p.empty() || std::filesystem::path(p).is_absolute() || base_dir_.empty()) return p;
        return (std::filesystem::path(base_dir_) / p).lexically_normal().string();
    }

    const std::map<std::string, ConfigValue>& values() const { return values_; }

    /// Canonical text: sorted `key = value` lines.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + format(v) + "\n";
        return out;
    }

    /// FNV-1a of the canonical text.
    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : canonical()) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    static std::string format(const ConfigValue& v) {
        if (auto* b = std::get_if<bool>(&v)) return *b ? "true" : "false";
        if (auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
        if (auto* d = std::get_if<double>(&v)) {
            std::ostringstream os;
            os.precision(17);
            os << *d;
            std::string s = os.str();
            if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
            return s;
        }
        return quote(std::get<std::string>(v));
    }

private:
    std::map<std::string, ConfigValue> values_;
    std::string base_dir_;

    static Error type_error(const std::string& key, const char* want) {
        return Error(ErrorCode::invalid_config, "config key '" + key + "' must be " + want);
    }

    static bool valid_key(std::string_view k) {
        if (k.empty()) return false;
        for (char c : k) {
            const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                            c == '-' || c == '.';
            if (!ok) return false;
        }
        return k.front() != '.' && k.back() != '.';
    }

    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return {};
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    // Drops a '#' comment that is not inside a string.
    static std::string strip_comment(const std::string& s) {
        bool in_str = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
            if (s[i] == '#' && !in_str) return s.substr(0, i);
        }
        return s;
    }

    static std::string quote(const std::string& s) {
        std::string out = "\"";
        for (char c : s) {
            if (c == '"' || c == '\\') out += '\\';
            out += c;
        }
        return out + "\"";
    }

    static ConfigValue parse_value(const std::string& v, const std::string& where) {
        if (v.empty()) throw Error(ErrorCode::format_error, where + ": missing value");
        if (v.front() == '"') {
            if (v.size() < 2 || v.back() != '"') throw Error(ErrorCode::format_error, where + ": unterminated string");
            std::string out;
            for (std::size_t i = 1; i + 1 < v.size(); ++i) {
                if (v[i] == '\\' && i + 2 < v.size()) {
                    const char e = v[++i];
                    out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
                } else if (v[i] == '"') {
                    throw Error(ErrorCode::format_error, where + ": stray quote in string");
                } else {
                    out += v[i];
                }
            }
            return out;
        }
        if (v == "true") return true;
        if (v == "false") return false;
        std::string digits;
        for (char c : v) {
            if (c != '_') digits += c;
        }
        std::size_t used = 0;
        const bool looks_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" ||
                                 digits == "+inf" || digits == "-inf" || digits == "nan";
        try {
            if (!looks_float) {
                const long long i = std::stoll(digits, &used, 10);
                if (used == digits.size()) return static_cast<std::int64_t>(i);
            } else {
                const double d = std::stod(digits, &used);
                if (used == digits.size()) return d;
            }
        } catch (const std::exception&) {
        }
        throw Error(ErrorCode::format_error, where + ": cannot parse value '" + v + "'");
    }
};

} // namespace cotext
