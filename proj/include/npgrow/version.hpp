#pragma once

namespace npgrow {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace npgrow
