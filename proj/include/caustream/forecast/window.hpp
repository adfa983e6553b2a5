#pragma once

#include <string>

#include "caustream/core/errors.hpp"
#include "caustream/core/panel.hpp"

namespace caustream::forecast {

enum class WindowPreset { kShort, kMedium, kLong, kCustom };

struct WindowConfig {
  Index history_len = 7;  // l
  Index horizon = 1;      // H
  WindowPreset preset = WindowPreset::kShort;

  static WindowConfig from_preset(WindowPreset p) {
    switch (p) {
      case WindowPreset::kShort: return {7, 1, p};
      case WindowPreset::kMedium: return {14, 3, p};
      case WindowPreset::kLong: return {28, 7, p};
      case WindowPreset::kCustom: break;
    }
    throw ConfigError("custom windows need explicit lengths");
  }

  static WindowConfig custom(Index history, Index horizon) {
    WindowConfig w{history, horizon, WindowPreset::kCustom};
    w.validate();
    return w;
  }

  void validate() const {
    if (history_len <= 0 || horizon <= 0) throw ConfigError("window lengths must be positive");
  }

  bool operator==(const WindowConfig&) const = default;
};

inline std::string to_string(WindowPreset p) {
  switch (p) {
    case WindowPreset::kShort: return "short";
    case WindowPreset::kMedium: return "medium";
    case WindowPreset::kLong: return "long";
    case WindowPreset::kCustom: return "custom";
  }
  return "custom";
}

inline WindowPreset parse_preset(const std::string& s) {
  if (s == "short") return WindowPreset::kShort;
  if (s == "medium") return WindowPreset::kMedium;
  if (s == "long") return WindowPreset::kLong;
  if (s == "custom") return WindowPreset::kCustom;
  throw ConfigError("unknown window preset '" + s + "' (short, medium, long)");
}

}  // namespace caustream::forecast
