#include "ddvqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ddvqa {

namespace {

const char* dtype_name(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s, const std::string& name) {
  if (s == "f32") return DType::kF32;
  if (s == "f64") return DType::kF64;
  throw std::runtime_error("checkpoint: tensor '" + name + "' has unknown dtype '" + s + "'");
}

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void write_container(const std::filesystem::path& path, const Container& container) {
  nlohmann::json header = nlohmann::json::object();
  std::string payload;
  for (const auto& [name, t] : container.tensors) {
    if (shape_numel(t.shape) != t.values.size())
      throw std::invalid_argument("checkpoint: tensor '" + name + "' shape/value mismatch");
    const std::size_t offset = payload.size();
    for (double v : t.values) {
      if (t.dtype == DType::kF32)
        put_le(payload, static_cast<float>(v));
      else
        put_le(payload, v);
    }
    header[name] = {{"shape", t.shape},
                    {"dtype", dtype_name(t.dtype)},
                    {"offset", offset},
                    {"length", payload.size() - offset}};
  }
  header["__metadata__"] = container.metadata;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for writing");
  std::string prefix;
  put_le(prefix, static_cast<std::uint64_t>(text.size()));
  out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw std::runtime_error("checkpoint: '" + path.string() + "' is truncated");
  const auto header_len = get_le<std::uint64_t>(bytes.data());
  if (8 + header_len > bytes.size())
    throw std::runtime_error("checkpoint: header length exceeds file size in '" + path.string() + "'");
  const auto header = nlohmann::json::parse(bytes.substr(8, header_len));
  const char* data = bytes.data() + 8 + header_len;
  const std::size_t data_len = bytes.size() - 8 - header_len;

  Container c;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      c.metadata = entry;
      continue;
    }
    StoredTensor t;
    t.shape = entry.at("shape").get<Shape>();
    t.dtype = parse_dtype(entry.at("dtype").get<std::string>(), name);
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto length = entry.at("length").get<std::size_t>();
    const std::size_t width = t.dtype == DType::kF32 ? 4 : 8;
    const std::size_t n = shape_numel(t.shape);
    if (length != n * width || offset + length > data_len)
      throw std::runtime_error("checkpoint: tensor '" + name + "' has inconsistent extent");
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const char* p = data + offset + i * width;
      t.values[i] = t.dtype == DType::kF32 ? static_cast<double>(get_le<float>(p))
                                           : get_le<double>(p);
    }
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

}  // namespace ddvqa
