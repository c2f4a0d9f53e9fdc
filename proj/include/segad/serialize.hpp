#pragma once

// JSON plumbing shared by every persisted artifact (prep plans, models,
// reports). Doubles are written in shortest round-trip form; non-finite values
// travel as the strings "inf", "-inf" and "nan".

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "segad/core.hpp"

namespace segad {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline json number_to_json(double v) {
    if (std::isfinite(v)) return v;
    return format_double(v);
}

inline double number_from_json(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return parse_double(j.get<std::string>());
    if (j.is_null()) return kMissing;
    throw Error("expected a number, got " + j.dump());
}

inline json numbers_to_json(std::span<const double> values) {
    json arr = json::array();
    for (double v : values) arr.push_back(number_to_json(v));
    return arr;
}

inline std::vector<double> numbers_from_json(const json& j) {
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& v : j) out.push_back(number_from_json(v));
    return out;
}

/// Checks the `schema_version` and `kind` header every artifact carries.
inline void expect_artifact(const json& j, std::string_view kind) {
    if (!j.contains("schema_version") || j.at("schema_version") != kSchemaVersion)
        throw Error("schema_version mismatch for " + std::string(kind) + " (expected " +
                    std::to_string(kSchemaVersion) + ")");
    if (j.value("kind", "") != kind)
        throw Error("artifact kind mismatch: expected '" + std::string(kind) + "', got '" +
                    j.value("kind", "") + "'");
}

inline void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << j.dump(1) << '\n';
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("malformed JSON in '" + path + "': " + e.what());
    }
}

}  // namespace segad
