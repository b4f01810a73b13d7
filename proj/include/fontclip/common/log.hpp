#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace fontclip::log {

enum class Level { Info, Warning };

using Sink = std::function<void(Level, std::string_view)>;

namespace detail {
inline std::mutex& mutex() {
    static std::mutex m;
    return m;
}
inline Sink& sink() {
    static Sink s = [](Level level, std::string_view msg) {
        std::cerr << (level == Level::Warning ? "[warn] " : "[info] ") << msg << '\n';
    };
    return s;
}
inline bool& quiet() {
    static bool q = false;
    return q;
}
}  // namespace detail

inline void set_sink(Sink s) {
    std::lock_guard lock(detail::mutex());
    detail::sink() = std::move(s);
}

/// Suppresses info-level messages (warnings still go through).
inline void set_quiet(bool q) { detail::quiet() = q; }

inline void write(Level level, std::string_view msg) {
    if (level == Level::Info && detail::quiet()) return;
    std::lock_guard lock(detail::mutex());
    if (detail::sink()) detail::sink()(level, msg);
}

inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void warn(std::string_view msg) { write(Level::Warning, msg); }

}  // namespace fontclip::log
