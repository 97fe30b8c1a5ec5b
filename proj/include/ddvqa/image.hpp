#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ddvqa {

/// H×W×C pixels in [0,1], row-major with interleaved channels.
struct Image {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::vector<float> pixels;

  static Image blank(std::uint32_t h, std::uint32_t w, std::uint32_t c, float value = 0.0f) {
    return Image{h, w, c, std::vector<float>(std::size_t{h} * w * c, value)};
  }
  float& at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) {
    return pixels[(std::size_t{y} * width + x) * channels + ch];
  }
  float at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) const {
    return pixels[(std::size_t{y} * width + x) * channels + ch];
  }
  bool operator==(const Image&) const = default;
};

/// Raw image file: u32 LE height, width, channels, then H·W·C f32 LE values.
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);

}  // namespace ddvqa
