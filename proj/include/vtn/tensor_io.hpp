#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "vtn/tensor.hpp"

namespace vtn {

struct FileFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ChecksumError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr uint8_t kDtypeF32 = 0;
inline constexpr uint8_t kDtypeF64 = 1;

// One named tensor: dtype tag, extents, little-endian row-major payload.
struct TensorRecord {
  std::string name;
  uint8_t dtype = kDtypeF32;
  std::vector<int64_t> shape;
  std::vector<unsigned char> payload;
};

// Container shared by checkpoints, dataset videos, and feature dumps:
// magic, format version, optional config snapshot, named records, crc32.
struct TensorFile {
  std::string config_text;
  std::vector<TensorRecord> records;
};

uint32_t crc32(const unsigned char* data, size_t len);

std::vector<unsigned char> encode_tensor_file(const TensorFile& file);
TensorFile decode_tensor_file(const std::vector<unsigned char>& bytes);

void write_tensor_file(const std::string& path, const TensorFile& file);
TensorFile read_tensor_file(const std::string& path);

template <class S>
TensorRecord to_record(const std::string& name, const Tensor<S>& t) {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  TensorRecord rec;
  rec.name = name;
  rec.dtype = std::is_same_v<S, float> ? kDtypeF32 : kDtypeF64;
  rec.shape = t.shape();
  rec.payload.resize(t.numel() * sizeof(S));
  std::memcpy(rec.payload.data(), t.data().data(), rec.payload.size());
  return rec;
}

// Bit-exact when the record dtype matches S; converts otherwise.
template <class S>
Tensor<S> from_record(const TensorRecord& rec) {
  const int64_t count = shape_numel(rec.shape);
  Tensor<S> t = Tensor<S>::zeros(rec.shape);
  if (rec.dtype == (std::is_same_v<S, float> ? kDtypeF32 : kDtypeF64)) {
    if (rec.payload.size() != static_cast<size_t>(count) * sizeof(S))
      throw FileFormatError("tensor record '" + rec.name + "': payload size mismatch");
    std::memcpy(t.data().data(), rec.payload.data(), rec.payload.size());
  } else if (rec.dtype == kDtypeF32) {
    if (rec.payload.size() != static_cast<size_t>(count) * sizeof(float))
      throw FileFormatError("tensor record '" + rec.name + "': payload size mismatch");
    const float* src = reinterpret_cast<const float*>(rec.payload.data());
    for (int64_t i = 0; i < count; ++i) t.data()[i] = static_cast<S>(src[i]);
  } else if (rec.dtype == kDtypeF64) {
    if (rec.payload.size() != static_cast<size_t>(count) * sizeof(double))
      throw FileFormatError("tensor record '" + rec.name + "': payload size mismatch");
    const double* src = reinterpret_cast<const double*>(rec.payload.data());
    for (int64_t i = 0; i < count; ++i) t.data()[i] = static_cast<S>(src[i]);
  } else {
    throw FileFormatError("tensor record '" + rec.name + "': unknown dtype tag");
  }
  return t;
}

}  // namespace vtn
