#include <filesystem>
#include <fstream>

#include "ddvqa/checkpoint.hpp"
#include "ddvqa/image.hpp"
#include "doctest.h"

using namespace ddvqa;

TEST_CASE("container round trip") {
  const auto path = std::filesystem::temp_directory_path() / "ddvqa_ckpt_test.bin";
  Container c;
  c.tensors["w"] = {{2, 2}, DType::kF32, {1.0, -2.5, 0.125, 3.0}};
  c.tensors["m"] = {{3}, DType::kF64, {0.1, 0.2, 1.0 / 3.0}};
  c.metadata["epoch"] = 4;
  write_container(path, c);

  const auto back = read_container(path);
  CHECK(back.metadata["epoch"] == 4);
  CHECK(back.tensors.at("w").values == c.tensors.at("w").values);
  CHECK(back.tensors.at("w").shape == Shape{2, 2});
  CHECK(back.tensors.at("m").values == c.tensors.at("m").values);
  CHECK(back.tensors.at("m").dtype == DType::kF64);

  SUBCASE("header layout") {
    std::ifstream in(path, std::ios::binary);
    unsigned char len[8];
    in.read(reinterpret_cast<char*>(len), 8);
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | len[i];
    std::string header(n, '\0');
    in.read(header.data(), static_cast<std::streamsize>(n));
    const auto j = nlohmann::json::parse(header);
    CHECK(j["w"]["dtype"] == "f32");
    CHECK(j["w"]["length"] == 16);
    CHECK(j.contains("__metadata__"));
  }
  std::filesystem::remove(path);
}

TEST_CASE("f32 storage rounds to single precision") {
  const auto path = std::filesystem::temp_directory_path() / "ddvqa_ckpt_f32.bin";
  Container c;
  c.tensors["x"] = {{1}, DType::kF32, {0.1}};
  write_container(path, c);
  CHECK(read_container(path).tensors.at("x").values[0] == static_cast<double>(0.1f));
  std::filesystem::remove(path);
}

TEST_CASE("truncated container is an error") {
  const auto path = std::filesystem::temp_directory_path() / "ddvqa_ckpt_bad.bin";
  std::ofstream(path) << "abc";
  CHECK_THROWS(read_container(path));
  std::filesystem::remove(path);
}

TEST_CASE("image file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "ddvqa_img_test.raw";
  auto img = Image::blank(2, 3, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i) / 18.0f;
  write_image(path, img);
  CHECK(read_image(path) == img);
  CHECK(std::filesystem::file_size(path) == 12 + 18 * 4);
  std::filesystem::remove(path);
}
