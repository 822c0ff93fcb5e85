#pragma once

namespace caplevel {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace caplevel
