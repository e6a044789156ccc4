#include "neuralmat/noise_field.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace neuralmat {

std::uint64_t mix64(std::uint64_t v) {
  v += 0x9E3779B97F4A7C15ULL;
  v = (v ^ (v >> 30)) * 0xBF58476D1CE4E5B9ULL;
  v = (v ^ (v >> 27)) * 0x94D049BB133111EBULL;
  return v ^ (v >> 31);
}

NoiseField::NoiseField(std::uint64_t seed, int channels) : seed_(seed), channels_(channels) {
  if (channels <= 0) throw std::invalid_argument("NoiseField: channel count must be positive");
}

float NoiseField::value(int channel, std::int32_t x, std::int32_t y) const {
  const std::uint64_t xy = static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)) |
                           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(y)) << 32);
  std::uint64_t h = mix64(seed_);
  h = mix64(h ^ xy);
  h = mix64(h ^ (static_cast<std::uint64_t>(channel) * 0xD1B54A32D192ED03ULL));

  // Two 32-bit halves, offset by half an ulp so u1 is never zero.
  const double u1 = (static_cast<double>(h >> 32) + 0.5) * 0x1p-32;
  const double u2 = (static_cast<double>(h & 0xFFFFFFFFULL) + 0.5) * 0x1p-32;
  return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2));
}

NoiseCrop NoiseField::sample_crop(Int2 origin, Int2 size) const {
  if (size.x < 1 || size.y < 1) throw std::invalid_argument("sample_crop: size components must be >= 1");
  NoiseCrop crop;
  crop.channels = channels_;
  crop.height = size.y;
  crop.width = size.x;
  crop.data.resize(static_cast<std::size_t>(channels_) * size.x * size.y);
  std::size_t k = 0;
  for (int c = 0; c < channels_; ++c)
    for (int i = 0; i < size.y; ++i)
      for (int j = 0; j < size.x; ++j)
        // Coordinates wrap in 32 bits, matching the signed coordinate domain.
        crop.data[k++] = value(c, static_cast<std::int32_t>(static_cast<std::uint32_t>(origin.x) + j),
                               static_cast<std::int32_t>(static_cast<std::uint32_t>(origin.y) + i));
  return crop;
}

}  // namespace neuralmat
