#pragma once

#include <memory>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace cec {

// Library-wide logger. Writes to stderr; stdout is reserved for JSON Lines.
inline std::shared_ptr<spdlog::logger> logger() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto existing = spdlog::get("cec");
        if (existing) return existing;
        auto l = spdlog::stderr_color_mt("cec");
        l->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
        l->set_level(spdlog::level::warn);
        return l;
    }();
    return instance;
}

}  // namespace cec
