#pragma once

// On-disk tensor format (all integers little-endian):
//   "CATR" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 rank | u8 pad=0 |
//   rank x u32 dims | raw little-endian element data, row-major

#include <cstdint>
#include <filesystem>
#include <vector>

#include "catr/tensor.hpp"

namespace catr {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype = DType::F64);
// `origin` names the source in error messages.
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F64);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace catr
