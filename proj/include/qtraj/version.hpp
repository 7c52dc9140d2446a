#pragma once

#include <string>

namespace qtraj {

inline constexpr int kVersionMajor = 0;
inline constexpr int kVersionMinor = 1;
inline constexpr int kVersionPatch = 0;

inline std::string version_string() { return "qtraj-v0.1.0"; }

}  // namespace qtraj
