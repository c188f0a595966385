#pragma once

namespace nuq {
inline constexpr const char *kVersion = "0.1.0";
}
