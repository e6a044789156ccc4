#pragma once

#include <cstdint>
#include <vector>

namespace neuralmat {

struct Int2 {
  std::int32_t x = 0;
  std::int32_t y = 0;
  friend bool operator==(const Int2&, const Int2&) = default;
};

/// Channel-planar block of noise values: data[(c * height + i) * width + j].
struct NoiseCrop {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  float at(int c, int i, int j) const { return data[(static_cast<std::size_t>(c) * height + i) * width + j]; }
};

/// Infinite, coordinate-addressable field of standard-normal samples.
///
/// Each sample is a pure function of (seed, channel, x, y): a counter-based
/// 64-bit hash is split into two uniforms and mapped through Box-Muller. There
/// is no state, so any two crops of the same field agree on their overlap and
/// the field can be queried at arbitrary signed 32-bit coordinates.
class NoiseField {
 public:
  static constexpr int kDefaultChannels = 8;

  explicit NoiseField(std::uint64_t seed, int channels = kDefaultChannels);

  std::uint64_t seed() const { return seed_; }
  int channels() const { return channels_; }

  float value(int channel, std::int32_t x, std::int32_t y) const;

  /// crop[c, i, j] = value(c, origin.x + j, origin.y + i). Throws
  /// std::invalid_argument on non-positive size.
  NoiseCrop sample_crop(Int2 origin, Int2 size) const;

 private:
  std::uint64_t seed_;
  int channels_;
};

/// splitmix64 finalizer; bijective on 64-bit words.
std::uint64_t mix64(std::uint64_t v);

}  // namespace neuralmat
