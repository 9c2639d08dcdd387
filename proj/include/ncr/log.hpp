#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace ncr {

using WarningHandler = std::function<void(const std::string&)>;

inline WarningHandler& warning_handler() {
  static WarningHandler handler = [](const std::string& msg) {
    std::clog << "ncr: warning: " << msg << '\n';
  };
  return handler;
}

/// Replaces the warning sink; returns the previous one.
inline WarningHandler set_warning_handler(WarningHandler h) {
  return std::exchange(warning_handler(), std::move(h));
}

inline void warn(const std::string& msg) {
  if (warning_handler()) warning_handler()(msg);
}

}  // namespace ncr
