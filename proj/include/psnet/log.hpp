#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

namespace psnet {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

// Minimal stderr logger with "{}" placeholders. libtorch bundles its own fmt
// headers, which cannot share a translation unit with the system spdlog/fmt.
class Logger {
 public:
  Logger() {
    if (const char* env = std::getenv("PSNET_LOG_LEVEL")) level_ = parse(env);
  }

  void set_level(LogLevel level) { level_ = level; }
  LogLevel level() const { return level_; }

  template <typename... Args>
  void debug(std::string_view f, const Args&... args) { log(LogLevel::debug, f, args...); }
  template <typename... Args>
  void info(std::string_view f, const Args&... args) { log(LogLevel::info, f, args...); }
  template <typename... Args>
  void warn(std::string_view f, const Args&... args) { log(LogLevel::warn, f, args...); }
  template <typename... Args>
  void error(std::string_view f, const Args&... args) { log(LogLevel::error, f, args...); }

  template <typename... Args>
  static std::string format(std::string_view f, const Args&... args) {
    std::ostringstream os;
    std::size_t pos = 0;
    auto emit = [&](const auto& arg) {
      const auto open = f.find("{}", pos);
      if (open == std::string_view::npos) return;
      os << f.substr(pos, open - pos) << arg;
      pos = open + 2;
    };
    (emit(args), ...);
    os << f.substr(pos);
    return os.str();
  }

 private:
  static LogLevel parse(std::string_view s) {
    if (s == "debug") return LogLevel::debug;
    if (s == "warn") return LogLevel::warn;
    if (s == "error") return LogLevel::error;
    if (s == "off") return LogLevel::off;
    return LogLevel::info;
  }

  template <typename... Args>
  void log(LogLevel level, std::string_view f, const Args&... args) {
    if (level < level_) return;
    static constexpr const char* names[] = {"debug", "info", "warn", "error"};
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    const auto line = format(f, args...);
    std::lock_guard lock(mutex_);
    std::cerr << '[' << std::put_time(&tm, "%H:%M:%S") << "] [" << names[static_cast<int>(level)] << "] " << line
              << '\n';
  }

  LogLevel level_ = LogLevel::info;
  std::mutex mutex_;
};

inline Logger* logger() {
  static Logger instance;
  return &instance;
}

}  // namespace psnet
