#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace healnet {

/// Planar RGB image, values in [0, 1], layout [channel][row][col].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(kChannels * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

/// 8-bit RGB PNG. Grey and alpha inputs are converted to RGB.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Largest centered square.
Image center_square(const Image& image);
/// Bilinear resampling (pixel-center aligned).
Image resize(const Image& image, std::size_t height, std::size_t width);

}  // namespace healnet
