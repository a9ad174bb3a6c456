#include "io/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "common/error.hpp"

namespace iak {

namespace {

constexpr char kMagic[4] = {'I', 'A', 'K', '1'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(U) > in.size()) throw IoError(path + ": truncated IAK1 file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32:
    case DType::I32: return 4;
    case DType::F64:
    case DType::I64: return 8;
  }
  return 0;
}

}  // namespace

std::uint64_t Tensor::size() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Tensor read_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError(path + ": missing IAK1 magic");
  std::size_t pos = 4;
  Tensor t;
  const auto code = get_le<std::uint32_t>(bytes, pos, path);
  if (code < 1 || code > 4) throw IoError(path + ": unknown dtype code " + std::to_string(code));
  t.dtype = static_cast<DType>(code);
  const auto rank = get_le<std::uint32_t>(bytes, pos, path);
  if (rank > 8) throw IoError(path + ": rank " + std::to_string(rank) + " is too large");
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.dims.push_back(get_le<std::uint64_t>(bytes, pos, path));
    if (t.dims.back() != 0 && count > std::numeric_limits<std::uint64_t>::max() / t.dims.back())
      throw IoError(path + ": dimensions overflow");
    count *= t.dims.back();
  }
  const std::size_t width = dtype_size(t.dtype);
  if (count > (bytes.size() - pos) / width || bytes.size() - pos != count * width)
    throw IoError(path + ": payload has " + std::to_string(bytes.size() - pos) + " bytes, header implies " +
                  std::to_string(count * width));
  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    switch (t.dtype) {
      case DType::F32: t.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos, path)); break;
      case DType::F64: t.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos, path)); break;
      case DType::I32:
        t.values[i] = static_cast<double>(static_cast<std::int32_t>(get_le<std::uint32_t>(bytes, pos, path)));
        break;
      case DType::I64:
        t.values[i] = static_cast<double>(static_cast<std::int64_t>(get_le<std::uint64_t>(bytes, pos, path)));
        break;
    }
  }
  return t;
}

void write_tensor(const std::string& path, const Tensor& t) {
  if (t.values.size() != t.size()) throw IoError(path + ": tensor values do not match its dimensions");
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dtype));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + t.values.size() * dtype_size(t.dtype));
  for (double v : t.values) {
    switch (t.dtype) {
      case DType::F32: put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case DType::F64: put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v)); break;
      case DType::I32:
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(std::llround(v))));
        break;
      case DType::I64:
        put_le<std::uint64_t>(out, static_cast<std::uint64_t>(static_cast<std::int64_t>(std::llround(v))));
        break;
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing " + path);
}

Tensor matrix_tensor(const Matrix& m, DType dtype) {
  Tensor t;
  t.dtype = dtype;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.values.push_back(m(i, j));
  return t;
}

}  // namespace iak
