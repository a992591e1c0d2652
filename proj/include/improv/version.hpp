#pragma once

namespace improv {

inline constexpr const char* kVersion = "0.1.0";

}
