#pragma once

namespace anacto {

inline constexpr const char* kToolName = "anacto";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace anacto
