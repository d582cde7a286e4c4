#include "vtn/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace vtn {

static_assert(std::endian::native == std::endian::little,
              "tensor file payloads are written little-endian via memcpy");

namespace {

constexpr char kMagic[8] = {'V', 'T', 'N', 'B', 'I', 'N', '0', '1'};
constexpr uint32_t kFormatVersion = 1;

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
  const size_t at = out.size();
  out.resize(at + 4);
  std::memcpy(out.data() + at, &v, 4);
}

void put_u64(std::vector<unsigned char>& out, uint64_t v) {
  const size_t at = out.size();
  out.resize(at + 8);
  std::memcpy(out.data() + at, &v, 8);
}

void put_i64(std::vector<unsigned char>& out, int64_t v) {
  const size_t at = out.size();
  out.resize(at + 8);
  std::memcpy(out.data() + at, &v, 8);
}

struct Cursor {
  const unsigned char* data;
  size_t size;
  size_t at = 0;

  void need(size_t n) const {
    if (at + n > size) throw FileFormatError("tensor file: truncated field");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, data + at, 4);
    at += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, data + at, 8);
    at += 8;
    return v;
  }
  int64_t i64() {
    need(8);
    int64_t v;
    std::memcpy(&v, data + at, 8);
    at += 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    return data[at++];
  }
  std::string str(uint64_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(data + at), len);
    at += len;
    return s;
  }
  std::vector<unsigned char> bytes(uint64_t len) {
    need(len);
    std::vector<unsigned char> b(data + at, data + at + len);
    at += len;
    return b;
  }
};

}  // namespace

uint32_t crc32(const unsigned char* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

std::vector<unsigned char> encode_tensor_file(const TensorFile& file) {
  std::vector<unsigned char> out(kMagic, kMagic + 8);
  put_u32(out, kFormatVersion);
  put_u64(out, file.config_text.size());
  out.insert(out.end(), file.config_text.begin(), file.config_text.end());
  put_u64(out, file.records.size());
  for (const auto& rec : file.records) {
    put_u64(out, rec.name.size());
    out.insert(out.end(), rec.name.begin(), rec.name.end());
    out.push_back(rec.dtype);
    put_u32(out, static_cast<uint32_t>(rec.shape.size()));
    for (int64_t e : rec.shape) put_i64(out, e);
    put_u64(out, rec.payload.size());
    out.insert(out.end(), rec.payload.begin(), rec.payload.end());
  }
  put_u32(out, crc32(out.data() + 8, out.size() - 8));
  return out;
}

TensorFile decode_tensor_file(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 + 4 + 4 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FileFormatError("tensor file: bad magic");

  // Verify integrity before touching any field so a truncated or corrupt
  // file never yields a partial result.
  uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  const uint32_t computed = crc32(bytes.data() + 8, bytes.size() - 12);
  if (stored != computed) throw ChecksumError("tensor file: checksum mismatch");

  Cursor c{bytes.data(), bytes.size() - 4, 8};
  const uint32_t version = c.u32();
  if (version != kFormatVersion)
    throw VersionMismatchError("tensor file: format version " + std::to_string(version) +
                               " (expected " + std::to_string(kFormatVersion) + ")");

  TensorFile file;
  file.config_text = c.str(c.u64());
  const uint64_t count = c.u64();
  file.records.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    TensorRecord rec;
    rec.name = c.str(c.u64());
    rec.dtype = c.u8();
    const uint32_t rank = c.u32();
    rec.shape.resize(rank);
    for (uint32_t r = 0; r < rank; ++r) rec.shape[r] = c.i64();
    rec.payload = c.bytes(c.u64());
    file.records.push_back(std::move(rec));
  }
  if (c.at != c.size) throw FileFormatError("tensor file: trailing bytes");
  return file;
}

void write_tensor_file(const std::string& path, const TensorFile& file) {
  const auto bytes = encode_tensor_file(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (!out) throw std::runtime_error("write failed: " + path);
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open: " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> bytes(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("read failed: " + path);
  return decode_tensor_file(bytes);
}

}  // namespace vtn
