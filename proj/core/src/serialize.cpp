// SPDX-License-Identifier: Apache-2.0
#include "dcsst/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dcsst/error.hpp"

namespace dcsst {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'S', 'T'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  const auto offset = static_cast<long long>(in.tellg());
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw FormatError("unexpected end of data at byte offset " + std::to_string(offset));
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { put_le(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
std::uint8_t read_u8(std::istream& in) { return get_le<std::uint8_t>(in); }
std::uint32_t read_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return get_le<std::uint64_t>(in); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  if (n > (std::uint64_t{1} << 30)) throw FormatError("string length " + std::to_string(n) + " too large");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError("truncated string payload");
  }
  return s;
}

void write_tensor(std::ostream& out, const Tensor& t, DType dtype) {
  out.write(kMagic, 4);
  write_u32(out, kTensorFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u64(out, d);
  write_u8(out, static_cast<std::uint8_t>(dtype));
  for (double v : t.data()) {
    if (dtype == DType::Float64) {
      put_le(out, v);
    } else {
      put_le(out, static_cast<float>(v));
    }
  }
  if (!out) throw IoError("failed writing tensor block");
}

Tensor read_tensor(std::istream& in) {
  const auto start = static_cast<long long>(in.tellg());
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("truncated tensor header at byte offset " + std::to_string(start));
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad tensor magic at byte offset " + std::to_string(start));
  }
  const std::uint32_t version = read_u32(in);
  if (version != kTensorFormatVersion) {
    throw VersionError("unsupported tensor format version " + std::to_string(version));
  }
  const std::uint32_t rank = read_u32(in);
  if (rank > 16) throw FormatError("tensor rank " + std::to_string(rank) + " too large");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    const std::uint64_t v = read_u64(in);
    if (v == 0 || v > kMaxElements) throw FormatError("invalid tensor dimension " + std::to_string(v));
    d = static_cast<std::size_t>(v);
    count *= v;
    if (count > kMaxElements) throw FormatError("tensor too large");
  }
  const std::uint8_t tag = read_u8(in);
  if (tag > 1) throw FormatError("unknown dtype tag " + std::to_string(tag));
  std::vector<double> values(count);
  for (auto& v : values) {
    v = tag == 0 ? get_le<double>(in) : static_cast<double>(get_le<float>(in));
  }
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::string& path, const Tensor& t, DType dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_tensor(out, t, dtype);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_tensor(in);
}

void write_named_tensors(std::ostream& out, const NamedTensors& tensors) {
  write_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
}

NamedTensors read_named_tensors(std::istream& in) {
  const std::uint64_t count = read_u64(in);
  if (count > (std::uint64_t{1} << 24)) throw FormatError("tensor table too large");
  NamedTensors tensors;
  tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32(in);
    if (len > 4096) throw FormatError("tensor name too long");
    std::string name(len, '\0');
    if (len && !in.read(name.data(), len)) throw FormatError("truncated tensor name");
    tensors.emplace_back(std::move(name), read_tensor(in));
  }
  return tensors;
}

}  // namespace dcsst
