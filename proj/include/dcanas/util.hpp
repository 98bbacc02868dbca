#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace dcanas {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace dcanas
