#pragma once

#include <filesystem>
#include <vector>

#include "siamtrack/tensor.hpp"

namespace siamtrack {

// Planar float image, values nominally in [0, 255].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c = 3, float fill = 0.f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const float* plane(int c) const { return data.data() + static_cast<std::size_t>(c) * height * width; }
  float* plane(int c) { return data.data() + static_cast<std::size_t>(c) * height * width; }

  std::vector<float> channel_means() const;
  bool operator==(const Image&) const = default;
};

Image read_png(const std::filesystem::path& path);
// Values are rounded and clamped to 8 bits.
void write_png(const std::filesystem::path& path, const Image& img);

// Square crop of side `side` centered at (cx, cy) in continuous pixel
// coordinates, resampled bilinearly to out_size x out_size. Area outside the
// frame takes the per-channel frame mean.
Image crop_and_resize(const Image& frame, double cx, double cy, double side, int out_size);
Image crop_and_resize(const Image& frame, double cx, double cy, double side, int out_size,
                      const std::vector<float>& fill);

// Network input normalization.
Tensor<float> to_tensor(const Image& img);
Tensor<float> to_tensor(const std::vector<Image>& batch);

}  // namespace siamtrack
