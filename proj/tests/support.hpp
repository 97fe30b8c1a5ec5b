#pragma once

// Shared helpers for tests that need images, corpora or tiny models.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "ddvqa/model.hpp"
#include "ddvqa/synthetic.hpp"
#include "ddvqa/training.hpp"

namespace testing {

inline ddvqa::Image noise_image(std::uint32_t h, std::uint32_t w, std::uint64_t seed) {
  ddvqa::Rng rng(seed);
  ddvqa::Image img = ddvqa::Image::blank(h, w, 3);
  for (auto& p : img.pixels) p = static_cast<float>(ddvqa::uniform01(rng));
  return img;
}

inline ddvqa::train::ImageStore image_store(const ddvqa::data::SyntheticCorpus& corpus) {
  ddvqa::train::ImageStore store;
  for (const auto& img : corpus.images) store.emplace(img.image_id, img.pixels);
  return store;
}

inline ddvqa::model::ModelConfig tiny_config(std::size_t vocab, std::size_t d = 16, std::size_t image = 16,
                                             std::size_t patch = 4) {
  ddvqa::model::ModelConfig c;
  c.d_model = d;
  c.n_heads = 2;
  c.n_layers_text = c.n_layers_image = c.n_layers_decoder = 2;
  c.patch_size = patch;
  c.image_height = c.image_width = image;
  c.vocab_size = vocab;
  return c;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ddvqa_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
