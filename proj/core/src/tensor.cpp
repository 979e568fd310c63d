#include "dfcn/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dfcn {

static_assert(std::endian::native == std::endian::little, "TSR1 codec assumes a little-endian host");

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t checked_numel(const Shape& shape) {
  if (shape.empty()) throw ShapeError("invalid shape: rank 0");
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 1) throw ShapeError("invalid shape " + shape_to_string(shape) + ": dimensions must be >= 1");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

template <typename T>
BasicTensor<T> elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b, ElementwiseKind kind) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  BasicTensor<T> out(a.shape(), T{});
  const T* pa = a.raw();
  const T* pb = b.raw();
  T* pc = out.raw();
  const std::size_t n = a.size();
  switch (kind) {
    case ElementwiseKind::add:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] + pb[i];
      break;
    case ElementwiseKind::sub:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] - pb[i];
      break;
    case ElementwiseKind::mul:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[i];
      break;
  }
  ensure_finite(out, "elementwise");
  return out;
}

template Tensor elementwise(const Tensor&, const Tensor&, ElementwiseKind);
template TensorD elementwise(const TensorD&, const TensorD&, ElementwiseKind);

void validate_labels(const LabelMap& labels, int num_classes) {
  for (auto v : labels.data()) {
    if (v != kUnlabeled && static_cast<int>(v) >= num_classes) {
      throw DataError("invalid label " + std::to_string(v) + " for " + std::to_string(num_classes) +
                      " classes");
    }
  }
}

template <typename T>
BasicTensor<T> dihedral(const BasicTensor<T>& t, int op) {
  if (op < 0 || op > 7) throw ParameterError("dihedral op must be in 0..7, got " + std::to_string(op));
  if (t.rank() < 2) throw ShapeError("dihedral: rank >= 2 required, got " + shape_to_string(t.shape()));
  const int rot = op % 4;
  const bool flip = op >= 4;
  const std::int64_t h = t.shape()[t.rank() - 2];
  const std::int64_t w = t.shape()[t.rank() - 1];
  const std::size_t planes = t.size() / static_cast<std::size_t>(h * w);
  const bool swap = rot % 2 == 1;
  const std::int64_t oh = swap ? w : h;
  const std::int64_t ow = swap ? h : w;
  Shape out_shape = t.shape();
  out_shape[t.rank() - 2] = oh;
  out_shape[t.rank() - 1] = ow;
  BasicTensor<T> out(out_shape, T{});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = t.raw() + p * static_cast<std::size_t>(h * w);
    T* dst = out.raw() + p * static_cast<std::size_t>(h * w);
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j0 = 0; j0 < ow; ++j0) {
        // Undo the flip first (it was applied last), then the rotation.
        const std::int64_t j = flip ? ow - 1 - j0 : j0;
        std::int64_t si = 0;
        std::int64_t sj = 0;
        switch (rot) {
          case 0: si = i; sj = j; break;
          case 1: si = j; sj = w - 1 - i; break;
          case 2: si = h - 1 - i; sj = w - 1 - j; break;
          case 3: si = h - 1 - j; sj = i; break;
        }
        dst[i * ow + j0] = src[si * w + sj];
      }
    }
  }
  return out;
}

template Tensor dihedral(const Tensor&, int);
template TensorD dihedral(const TensorD&, int);
template LabelMap dihedral(const LabelMap&, int);

int dihedral_inverse(int op) {
  if (op < 0 || op > 7) throw ParameterError("dihedral op must be in 0..7, got " + std::to_string(op));
  if (op >= 4) return op;
  return (4 - op) % 4;
}

int dihedral_compose(int first, int second) {
  if (first < 0 || first > 7 || second < 0 || second > 7) {
    throw ParameterError("dihedral op must be in 0..7");
  }
  const int r1 = first % 4;
  const int r2 = second % 4;
  const bool f1 = first >= 4;
  const bool f2 = second >= 4;
  const int rot = ((r1 + (f1 ? -r2 : r2)) % 4 + 4) % 4;
  return rot + ((f1 != f2) ? 4 : 0);
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <typename T>
std::vector<std::uint8_t> encode_impl(const BasicTensor<T>& t, std::uint8_t dtype) {
  if (t.rank() < 1 || t.rank() > 4) {
    throw ShapeError("TSR1 supports rank 1..4, got " + shape_to_string(t.shape()));
  }
  std::vector<std::uint8_t> out{'T', 'S', 'R', '1', dtype, static_cast<std::uint8_t>(t.rank())};
  for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.raw());
  out.insert(out.end(), bytes, bytes + t.size() * sizeof(T));
  return out;
}

template <typename T>
BasicTensor<T> decode_impl(std::span<const std::uint8_t> bytes, std::uint8_t dtype, std::size_t* consumed) {
  if (bytes.size() < 6) throw FormatError("TSR1: truncated header");
  if (std::memcmp(bytes.data(), "TSR1", 4) != 0) throw FormatError("TSR1: bad magic");
  if (bytes[4] != dtype) {
    throw FormatError("TSR1: dtype code mismatch (expected " + std::to_string(dtype) + ", found " +
                      std::to_string(bytes[4]) + ")");
  }
  const std::size_t rank = bytes[5];
  if (rank < 1 || rank > 4) throw FormatError("TSR1: bad rank " + std::to_string(rank));
  const std::size_t header = 6 + 4 * rank;
  if (bytes.size() < header) throw FormatError("TSR1: truncated header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(bytes.data() + 6 + 4 * i);
    if (shape[i] < 1) throw FormatError("TSR1: zero dimension in dims");
  }
  const std::size_t n = checked_numel(shape);
  const std::size_t payload = n * sizeof(T);
  if (bytes.size() - header < payload) throw FormatError("TSR1: truncated payload");
  std::vector<T> data(n);
  std::memcpy(data.data(), bytes.data() + header, payload);
  if (consumed) *consumed = header + payload;
  return BasicTensor<T>(std::move(shape), std::move(data));
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) { return encode_impl(t, kDtypeF32); }
std::vector<std::uint8_t> encode_tensor(const LabelMap& t) { return encode_impl(t, kDtypeU8); }

Tensor decode_tensor_f32(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  return decode_impl<float>(bytes, kDtypeF32, consumed);
}

LabelMap decode_tensor_u8(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  return decode_impl<std::uint8_t>(bytes, kDtypeU8, consumed);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

void write_tensor_file(const Tensor& t, const std::filesystem::path& path) {
  write_file_bytes(path, encode_tensor(t));
}

void write_tensor_file(const LabelMap& t, const std::filesystem::path& path) {
  write_file_bytes(path, encode_tensor(t));
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_tensor_f32(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

LabelMap read_label_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_tensor_u8(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace dfcn
