#include "ddvqa/image.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace ddvqa {

namespace {

static_assert(std::endian::native == std::endian::little,
              "raw image I/O assumes a little-endian host");

template <typename T>
void write_raw(std::ofstream& out, const T* values, std::size_t n) {
  out.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(n * sizeof(T)));
}

}  // namespace

void write_image(const std::filesystem::path& path, const Image& image) {
  if (image.pixels.size() != std::size_t{image.height} * image.width * image.channels)
    throw std::invalid_argument("write_image: pixel count does not match dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_image: cannot open '" + path.string() + "'");
  const std::uint32_t header[3] = {image.height, image.width, image.channels};
  write_raw(out, header, 3);
  write_raw(out, image.pixels.data(), image.pixels.size());
  if (!out) throw std::runtime_error("write_image: write failed for '" + path.string() + "'");
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_image: cannot open '" + path.string() + "'");
  std::uint32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw std::runtime_error("read_image: '" + path.string() + "' has a truncated header");
  Image img{header[0], header[1], header[2], {}};
  img.pixels.resize(std::size_t{img.height} * img.width * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  if (!in) throw std::runtime_error("read_image: '" + path.string() + "' has truncated pixels");
  return img;
}

}  // namespace ddvqa
