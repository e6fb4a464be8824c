#pragma once

#include <cstdint>
#include <string_view>

namespace fnfm {

// Pinned 64-bit FNV-1a with a seed folded into the offset basis. The bucket
// layout of every encoded dataset and saved model depends on this function;
// it must never change.
inline std::uint64_t hash64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9e3779b97f4a7c15ULL);
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Categorical bucket rule: slot 0 is reserved for out-of-vocabulary/empty,
// hashed values land in [1, cardinality).
inline std::uint32_t hash_bucket(std::string_view value, std::uint64_t cardinality,
                                 std::uint64_t seed) {
  return static_cast<std::uint32_t>(1 + hash64(value, seed) % (cardinality - 1));
}

}  // namespace fnfm
