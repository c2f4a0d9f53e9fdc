#pragma once

// Line-oriented `key = value` configuration. Keys use dotted section prefixes
// (`rf.n_trees`); `#` starts a comment; list values are comma separated.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "segad/core.hpp"
#include "segad/data_io.hpp"

namespace segad {

class Config {
public:
    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            if (detail::trim(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw Error("config line " + std::to_string(line_no) + ": expected 'key = value'");
            const auto key = detail::trim(line.substr(0, eq));
            if (key.empty()) throw Error("config line " + std::to_string(line_no) + ": empty key");
            cfg.values_[key] = detail::trim(line.substr(eq + 1));
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot read config '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string get(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        try {
            return parse_double(values_.at(key));
        } catch (const Error&) {
            throw Error("config key '" + key + "' expects a number");
        }
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        if (!has(key)) return fallback;
        const auto& v = values_.at(key);
        if (v.empty() || !detail::all_digits(v) || v[0] == '-' || v[0] == '+')
            throw Error("config key '" + key + "' expects a non-negative integer");
        return static_cast<std::size_t>(std::stoull(v));
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        return static_cast<std::uint64_t>(get_size(key, static_cast<std::size_t>(fallback)));
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& v = values_.at(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw Error("config key '" + key + "' expects true or false");
    }

    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const {
        if (!has(key)) return fallback;
        std::vector<std::string> out;
        std::stringstream ss(values_.at(key));
        std::string item;
        while (std::getline(ss, item, ','))
            if (!detail::trim(item).empty()) out.push_back(detail::trim(item));
        return out;
    }

    /// Throws on the first key not in `known`, so typos do not pass silently.
    template <typename Known>
    void check_known(const Known& known) const {
        for (const auto& [k, v] : values_)
            if (std::find(std::begin(known), std::end(known), k) == std::end(known))
                throw Error("unknown config key '" + k + "'");
    }

    /// Canonical text: keys sorted, one `key = value` per line.
    std::string dump() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace segad
