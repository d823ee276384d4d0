#include "cmwnet/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "cmwnet/errors.hpp"

namespace cmwnet {
namespace {

template <typename V>
void put(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::ifstream& in, const std::filesystem::path& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw DataError("truncated tensor file " + path.string());
  }
  return v;
}

std::string get_bytes(std::ifstream& in, std::uint64_t n, const std::filesystem::path& path) {
  if (n > (1ULL << 32)) throw DataError("implausible length in " + path.string());
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw DataError("truncated tensor file " + path.string());
  }
  return s;
}

std::ifstream open_checked(const std::filesystem::path& path, std::string_view magic,
                           std::uint32_t& element_bytes, json& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char buf[8];
  if (!in.read(buf, 8) || std::string_view(buf, 8) != magic) {
    throw DataError(path.string() + " is not a " + std::string(magic) + " file");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != 1) throw DataError("unsupported tensor file version in " + path.string());
  element_bytes = get<std::uint32_t>(in, path);
  if (element_bytes != 4 && element_bytes != 8) {
    throw DataError("bad element size in " + path.string());
  }
  const auto header_len = get<std::uint64_t>(in, path);
  try {
    header = json::parse(get_bytes(in, header_len, path));
  } catch (const json::exception& e) {
    throw DataError("corrupt header in " + path.string() + ": " + e.what());
  }
  return in;
}

}  // namespace

template <typename T>
void write_tensor_file(const std::filesystem::path& path, std::string_view magic,
                       const json& header, const std::map<std::string, Tensor<T>>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(magic.data(), 8);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, sizeof(T));
  const std::string text = header.dump();
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(T)));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

template <typename T>
TensorFile<T> read_tensor_file(const std::filesystem::path& path, std::string_view magic) {
  TensorFile<T> file;
  std::uint32_t element_bytes = 0;
  auto in = open_checked(path, magic, element_bytes, file.header);
  file.element_bytes = element_bytes;
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name = get_bytes(in, name_len, path);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 8) throw DataError("implausible tensor rank in " + path.string());
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    Tensor<T> t(shape);
    const std::string raw = get_bytes(in, t.size() * element_bytes, path);
    if (element_bytes == sizeof(T)) {
      std::memcpy(t.data(), raw.data(), raw.size());
    } else if (element_bytes == 4) {
      for (std::size_t j = 0; j < t.size(); ++j) {
        float v;
        std::memcpy(&v, raw.data() + 4 * j, 4);
        t[j] = static_cast<T>(v);
      }
    } else {
      for (std::size_t j = 0; j < t.size(); ++j) {
        double v;
        std::memcpy(&v, raw.data() + 8 * j, 8);
        t[j] = static_cast<T>(v);
      }
    }
    if (!file.tensors.emplace(std::move(name), std::move(t)).second) {
      throw DataError("duplicate tensor name in " + path.string());
    }
  }
  return file;
}

json read_tensor_file_header(const std::filesystem::path& path, std::string_view magic,
                             std::size_t* element_bytes) {
  std::uint32_t eb = 0;
  json header;
  open_checked(path, magic, eb, header);
  if (element_bytes) *element_bytes = eb;
  return header;
}

template void write_tensor_file<float>(const std::filesystem::path&, std::string_view,
                                       const json&, const std::map<std::string, Tensor<float>>&);
template void write_tensor_file<double>(const std::filesystem::path&, std::string_view,
                                        const json&, const std::map<std::string, Tensor<double>>&);
template TensorFile<float> read_tensor_file<float>(const std::filesystem::path&, std::string_view);
template TensorFile<double> read_tensor_file<double>(const std::filesystem::path&, std::string_view);

}  // namespace cmwnet
