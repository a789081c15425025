#pragma once

#include <cstdint>
#include <random>

namespace anholo {

// Independent stream per (master seed, path, purpose). No shared generators.
inline std::mt19937_64 path_stream(std::uint64_t seed, std::uint64_t path, std::uint32_t purpose = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), purpose};
  return std::mt19937_64(seq);
}

}  // namespace anholo
