#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace neuralmat {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Channel-planar float image: data[(c * height + i) * width + j].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int channels_, int height_, int width_, float fill = 0.0f)
      : channels(channels_), height(height_), width(width_),
        data(static_cast<std::size_t>(channels_) * height_ * width_, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int i, int j) { return data[c * plane() + static_cast<std::size_t>(i) * width + j]; }
  float at(int c, int i, int j) const { return data[c * plane() + static_cast<std::size_t>(i) * width + j]; }
  bool same_shape(const Image& o) const { return channels == o.channels && height == o.height && width == o.width; }
};

float srgb_encode(float linear);
float srgb_decode(float encoded);

/// PNG (8 or 16 bit) or JPEG, values scaled to [0, 1]. Alpha is dropped;
/// gray images stay single-channel. Throws IoError naming the path.
Image read_image(const std::filesystem::path& path);
/// Values are clamped to [0, 1] and quantized to the requested depth.
void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8);

/// Uncompressed 32-bit float OpenEXR, one channel per plane (R, G, B or Y).
void write_exr(const std::filesystem::path& path, const Image& img);
Image read_exr(const std::filesystem::path& path);

Image to_rgb(const Image& img);
Image resize_bilinear(const Image& img, int width, int height);
/// Crops to the target aspect ratio around the center, then resizes.
Image center_crop_resize(const Image& img, int width, int height);

}  // namespace neuralmat
