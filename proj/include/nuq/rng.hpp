#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace nuq {

// Stream purposes. Separate tags keep the draws used for different outputs
// statistically independent even when they share a seed and voxel index.
enum class StreamTag : std::uint64_t {
  posterior_draws = 0x5d1e,
  voxel_pairs = 0x9a1f,
  phantom_noise = 0x70a5,
  misc = 0xffff,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t &state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ generator satisfying UniformRandomBitGenerator.
///
/// Streams are keyed by (seed, stream index, tag): the key is hashed through
/// SplitMix64 into the 256-bit state, so the k-th voxel's draws depend only
/// on the key and never on which thread visits the voxel or in what order.
class StreamRng {
public:
  using result_type = std::uint64_t;

  StreamRng(std::uint64_t seed, std::uint64_t stream,
            StreamTag tag = StreamTag::misc) {
    std::uint64_t sm = seed;
    std::uint64_t mixed = splitmix64(sm) ^ (stream * 0xd1b54a32d192ed03ULL);
    mixed ^= static_cast<std::uint64_t>(tag) * 0x8cb92ba72f3d8dd7ULL;
    for (auto &word : state_) word = splitmix64(mixed);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> state_{};
};

} // namespace nuq
