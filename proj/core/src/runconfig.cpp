// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/runconfig.hpp"

#include <chrono>
#include <sstream>

namespace composia::cli {

using io::json;

RunConfig RunConfig::load(const std::optional<std::filesystem::path>& config_file, json defaults) {
    RunConfig cfg(std::move(defaults));
    if (config_file) {
        const json file = io::read_json_file(*config_file);
        COMPOSIA_CHECK(file.is_object(), << "config file must hold a JSON object");
        for (auto it = file.begin(); it != file.end(); ++it) cfg.values_[it.key()] = it.value();
    }
    return cfg;
}

void RunConfig::set_dotted(const std::string& dotted_key, const std::string& value) {
    json* node = &values_;
    std::istringstream is(dotted_key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(is, part, '.')) parts.push_back(part);
    COMPOSIA_CHECK(!parts.empty(), << "empty override key");
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) (*node)[parts[i]] = json::object();
        node = &(*node)[parts[i]];
    }
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    (*node)[parts.back()] = parsed;
}

void RunConfig::apply_override_args(const std::vector<std::string>& args) {
    size_t i = 0;
    while (i < args.size()) {
        const std::string& a = args[i];
        COMPOSIA_CHECK(a.rfind("--", 0) == 0, << "unexpected argument '" << a << "' (expected --key value)");
        COMPOSIA_CHECK(i + 1 < args.size(), << "missing value for override " << a);
        set_dotted(a.substr(2), args[i + 1]);
        i += 2;
    }
}

const json* RunConfig::find(const std::string& dotted_key) const {
    const json* node = &values_;
    std::istringstream is(dotted_key);
    std::string part;
    while (std::getline(is, part, '.')) {
        if (!node->is_object() || !node->contains(part)) return nullptr;
        node = &(*node)[part];
    }
    return node;
}

double RunConfig::num(const std::string& key, double fallback) const {
    const json* n = find(key);
    return n != nullptr && n->is_number() ? n->get<double>() : fallback;
}

int64_t RunConfig::integer(const std::string& key, int64_t fallback) const {
    const json* n = find(key);
    return n != nullptr && n->is_number() ? n->get<int64_t>() : fallback;
}

bool RunConfig::boolean(const std::string& key, bool fallback) const {
    const json* n = find(key);
    return n != nullptr && n->is_boolean() ? n->get<bool>() : fallback;
}

std::string RunConfig::str(const std::string& key, const std::string& fallback) const {
    const json* n = find(key);
    return n != nullptr && n->is_string() ? n->get<std::string>() : fallback;
}

bool RunConfig::has(const std::string& key) const { return find(key) != nullptr; }

void RunConfig::echo_to(const std::filesystem::path& dir) const {
    io::write_json_file(dir / "config.json", values_);
}

std::filesystem::path make_output_dir(const std::optional<std::string>& out_flag,
                                      const std::string& subcommand) {
    if (out_flag && !out_flag->empty()) {
        std::filesystem::create_directories(*out_flag);
        return *out_flag;
    }
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d%02d%02d-%02d%02d%02d-%03d", tm_utc.tm_year + 1900,
                  tm_utc.tm_mon + 1, tm_utc.tm_mday, tm_utc.tm_hour, tm_utc.tm_min, tm_utc.tm_sec,
                  static_cast<int>(ms));
    std::filesystem::path dir = std::filesystem::path("runs") / (subcommand + "-" + buf);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace composia::cli
