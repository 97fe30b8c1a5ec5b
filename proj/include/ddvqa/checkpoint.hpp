#pragma once

// Tensor container file:
//   u64 little-endian header length N
//   N bytes of JSON: { name: {shape, dtype, offset, length}, ..., "__metadata__": {...} }
//   raw little-endian buffers, offsets relative to the end of the header
//
// Model weights are written as "f32". Resumable training state uses "f64" so
// a resumed run continues exactly where it stopped.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ddvqa/tensor.hpp"
#include "json.hpp"

namespace ddvqa {

enum class DType { kF32, kF64 };

struct StoredTensor {
  Shape shape;
  DType dtype = DType::kF32;
  std::vector<double> values;  // widened on read
};

struct Container {
  std::map<std::string, StoredTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();
};

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

}  // namespace ddvqa
