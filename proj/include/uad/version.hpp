#pragma once

namespace uad {

inline constexpr const char* kCodeVersion = "uadpelvis-0.1.0";

}  // namespace uad
