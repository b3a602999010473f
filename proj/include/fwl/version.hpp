#pragma once

namespace fwl {
inline constexpr const char* kVersion = "0.1.0";
}
