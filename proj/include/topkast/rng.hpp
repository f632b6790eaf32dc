#pragma once

#include <cstdint>
#include <random>

namespace topkast {

/// Independent random streams. Every draw in a run comes from a generator
/// derived from (seed, stream, step, layer), so no generator state has to
/// survive a checkpoint.
enum class Stream : std::uint32_t {
  Init = 1,
  Shuffle = 2,
  RandomBackward = 3,
  StaticMask = 4,
  SetRegrow = 5,
  Teacher = 6,
  TeacherData = 7,
};

inline std::mt19937_64 derive_rng(std::uint64_t seed, Stream stream, std::uint64_t step, std::uint64_t layer) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(step),
                    static_cast<std::uint32_t>(step >> 32), static_cast<std::uint32_t>(layer)};
  return std::mt19937_64(seq);
}

}  // namespace topkast
