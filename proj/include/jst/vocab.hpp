#pragma once

#include <cstdint>

namespace jst {

using TokenId = std::int32_t;

// Reserved ids shared by every vocabulary; real symbols start at first_real.
namespace vocab {
inline constexpr TokenId pad = 0;
inline constexpr TokenId bos = 1;
inline constexpr TokenId eos = 2;
inline constexpr TokenId unk = 3;
inline constexpr TokenId first_real = 4;
inline constexpr int reserved = 4;
}  // namespace vocab

}  // namespace jst
