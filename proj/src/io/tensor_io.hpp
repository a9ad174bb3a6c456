#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "common/linalg.hpp"

namespace iak {

// IAK1 tensor file: "IAK1", u32 dtype, u32 rank, rank x u64 dims, then a
// row-major payload; all integers and values little-endian.
enum class DType : std::uint32_t { F32 = 1, F64 = 2, I32 = 3, I64 = 4 };

struct Tensor {
  DType dtype = DType::F64;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // row-major, converted from the stored dtype

  std::uint64_t size() const;
};

Tensor read_tensor(const std::string& path);
void write_tensor(const std::string& path, const Tensor& t);

// Row-major 2-D tensor from a matrix, stored as F32 or F64.
Tensor matrix_tensor(const Matrix& m, DType dtype);

}  // namespace iak
