// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace composia {

/// Error raised when an operation's preconditions or invariants are violated.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline std::string format_check_message(const char* cond, const char* file, int line,
                                        const std::string& extra) {
    std::ostringstream oss;
    oss << "check failed: " << cond << " (" << file << ":" << line << ")";
    if (!extra.empty()) {
        oss << " " << extra;
    }
    return oss.str();
}
}  // namespace detail

}  // namespace composia

#define COMPOSIA_CHECK(cond, ...)                                                       \
    do {                                                                                \
        if (!(cond)) {                                                                  \
            std::ostringstream composia_check_oss_;                                     \
            composia_check_oss_ << "" __VA_ARGS__;                                      \
            throw ::composia::Error(::composia::detail::format_check_message(           \
                #cond, __FILE__, __LINE__, composia_check_oss_.str()));                 \
        }                                                                               \
    } while (0)

#define COMPOSIA_THROW(...)                                                             \
    do {                                                                                \
        std::ostringstream composia_throw_oss_;                                         \
        composia_throw_oss_ << __VA_ARGS__;                                             \
        throw ::composia::Error(composia_throw_oss_.str());                             \
    } while (0)

namespace composia {

/// Worker-parallelism cap: value of COMPOSIA_THREADS if set, else hardware concurrency.
int worker_thread_count();

}  // namespace composia
