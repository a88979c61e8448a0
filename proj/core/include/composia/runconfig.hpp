// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "composia/serialize.hpp"

namespace composia::cli {

/// Resolved run configuration: defaults, optional config file, then dotted
/// command-line overrides (--a.b.c value). The fully resolved tree is echoed
/// verbatim into every output directory.
class RunConfig {
public:
    RunConfig() : values_(io::json::object()) {}
    explicit RunConfig(io::json defaults) : values_(std::move(defaults)) {}

    static RunConfig load(const std::optional<std::filesystem::path>& config_file, io::json defaults);

    /// Apply one dotted override; the value string is parsed as JSON when
    /// possible, else kept as a string.
    void set_dotted(const std::string& dotted_key, const std::string& value);

    /// Apply trailing CLI tokens of the form --a.b.c value.
    void apply_override_args(const std::vector<std::string>& args);

    double num(const std::string& dotted_key, double fallback) const;
    int64_t integer(const std::string& dotted_key, int64_t fallback) const;
    bool boolean(const std::string& dotted_key, bool fallback) const;
    std::string str(const std::string& dotted_key, const std::string& fallback) const;
    bool has(const std::string& dotted_key) const;

    const io::json& values() const { return values_; }
    io::json& values() { return values_; }

    void echo_to(const std::filesystem::path& dir) const;

private:
    const io::json* find(const std::string& dotted_key) const;
    io::json values_;
};

/// Output directory policy: --out when given, else a fresh timestamped
/// directory under runs/<subcommand>-<stamp>.
std::filesystem::path make_output_dir(const std::optional<std::string>& out_flag,
                                      const std::string& subcommand);

/// Exit codes shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitRuntimeError = 3;

}  // namespace composia::cli
