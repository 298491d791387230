#pragma once

namespace rulforge {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace rulforge
