// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dcsst/tensor.hpp"

namespace dcsst {

// Binary tensor block, little-endian:
//   "DCST" | version u32 | rank u32 | dims u64[rank] | dtype u8 | data
// dtype 0 = float64, 1 = float32. Readers accept both; writers emit float64
// unless asked otherwise.

inline constexpr std::uint32_t kTensorFormatVersion = 1;

enum class DType : std::uint8_t { Float64 = 0, Float32 = 1 };

void write_tensor(std::ostream& out, const Tensor& t, DType dtype = DType::Float64);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::string& path, const Tensor& t, DType dtype = DType::Float64);
Tensor load_tensor(const std::string& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// count u64, then per entry: name length u32 | name bytes | tensor block.
void write_named_tensors(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_named_tensors(std::istream& in);

// Little-endian primitives shared by the checkpoint writers.
void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_string(std::ostream& out, const std::string& s);  // u64 length + bytes
std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
std::string read_string(std::istream& in);

}  // namespace dcsst
