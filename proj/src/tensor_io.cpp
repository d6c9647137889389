#include "catr/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace catr {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'T', 'R'};
constexpr std::uint8_t kVersion = 1;

template <class U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <class U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype) {
  const Shape& shape = t.shape();
  if (shape.size() > 255) throw FormatError("tensor rank exceeds 255");
  std::vector<std::uint8_t> out;
  const std::size_t elem = dtype == DType::F32 ? 4 : 8;
  out.reserve(8 + 4 * shape.size() + elem * t.numel());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  out.push_back(0);
  for (std::size_t d : shape) {
    if (d > 0xffffffffu) throw FormatError("dimension exceeds u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) {
    if (dtype == DType::F32) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  auto fail = [&](const std::string& what) { return FormatError(origin + ": " + what); };
  if (bytes.size() < 8) throw fail("truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw fail("bad magic");
  if (bytes[4] != kVersion) throw fail("unsupported version " + std::to_string(bytes[4]));
  if (bytes[5] > 1) throw fail("unknown dtype " + std::to_string(bytes[5]));
  const auto dtype = static_cast<DType>(bytes[5]);
  const std::size_t rank = bytes[6];
  if (bytes.size() < 8 + 4 * rank) throw fail("truncated dimensions");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_le<std::uint32_t>(bytes.data() + 8 + 4 * i);
    if (shape[i] == 0) throw fail("zero-sized dimension");
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t elem = dtype == DType::F32 ? 4 : 8;
  const std::size_t offset = 8 + 4 * rank;
  if (bytes.size() != offset + n * elem) {
    throw fail("expected " + std::to_string(offset + n * elem) + " bytes, found " + std::to_string(bytes.size()));
  }
  std::vector<double> values(n);
  const std::uint8_t* p = bytes.data() + offset;
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == DType::F32) {
      values[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)));
    } else {
      values[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i));
    }
  }
  return Tensor::from(std::move(shape), std::move(values));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  const auto bytes = encode_tensor(t, dtype);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(path.string() + ": cannot open for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError(path.string() + ": write failed");
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(path.string() + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes, path.string());
}

}  // namespace catr
