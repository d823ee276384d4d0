#pragma once

// Binary tensor container shared by checkpoints and pretrained-weight files.
//
// Layout (little-endian):
//   char[8]  magic
//   u32      format version (1)
//   u32      element size in bytes (4 = f32, 8 = f64)
//   u64      header length, then that many bytes of UTF-8 JSON
//   u64      tensor count, then per tensor:
//              u32 name length, name bytes, u32 rank, u64 dims[rank], raw data

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "cmwnet/config.hpp"
#include "cmwnet/tensor.hpp"

namespace cmwnet {

inline constexpr std::string_view kCheckpointMagic = "CMWCKPT1";
inline constexpr std::string_view kWeightsMagic = "CMWTENS1";

template <typename T>
struct TensorFile {
  json header;
  std::size_t element_bytes = sizeof(T);
  std::map<std::string, Tensor<T>> tensors;
};

template <typename T>
void write_tensor_file(const std::filesystem::path& path, std::string_view magic,
                       const json& header, const std::map<std::string, Tensor<T>>& tensors);

/// Reads a container, converting stored elements to T. Throws DataError on a
/// missing file, wrong magic, or truncated content.
template <typename T>
TensorFile<T> read_tensor_file(const std::filesystem::path& path, std::string_view magic);

/// Header only, without reading tensor payloads.
json read_tensor_file_header(const std::filesystem::path& path, std::string_view magic,
                             std::size_t* element_bytes = nullptr);

}  // namespace cmwnet
