#pragma once

namespace geomlens {

inline constexpr const char* kToolName = "geomlens";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace geomlens
