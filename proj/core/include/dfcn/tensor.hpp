#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "dfcn/error.hpp"

namespace dfcn {

using Shape = std::vector<std::int64_t>;

/// Class code marking a pixel without ground truth.
inline constexpr std::uint8_t kUnlabeled = 255;

std::string shape_to_string(const Shape& shape);

/// Product of the dimensions; throws ShapeError unless every dimension is >= 1.
std::size_t checked_numel(const Shape& shape);

/**
 * Dense row-major array. Feature maps are C x H x W, convolution weights
 * OC x IC x KH x KW, biases length-OC vectors. No batch dimension.
 *
 * `float` is the storage type of the library; `double` instances exist for
 * finite-difference gradient checking and `uint8_t` instances hold label maps
 * and region-of-interest masks.
 */
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  static BasicTensor alloc(Shape shape, T fill = T{}) { return BasicTensor(std::move(shape), fill); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Indexed access for rank-3 (C x H x W) tensors.
  T& at(std::int64_t c, std::int64_t y, std::int64_t x) noexcept {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  const T& at(std::int64_t c, std::int64_t y, std::int64_t x) const noexcept {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }

  /// Contiguous view of one channel (plane) of a C x H x W tensor.
  std::span<T> channel(std::int64_t c) noexcept {
    const auto plane = static_cast<std::size_t>(shape_[1] * shape_[2]);
    return std::span<T>(data_).subspan(static_cast<std::size_t>(c) * plane, plane);
  }
  std::span<const T> channel(std::int64_t c) const noexcept {
    const auto plane = static_cast<std::size_t>(shape_[1] * shape_[2]);
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(c) * plane, plane);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Same data under a new shape with equal element count.
  BasicTensor reshaped(Shape shape) const {
    if (checked_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;
/// H x W class codes in 0..C-1 or kUnlabeled.
using LabelMap = BasicTensor<std::uint8_t>;
/// H x W binary mask (0 or 1).
using Mask = BasicTensor<std::uint8_t>;

template <typename T>
BasicTensor<T> alloc(Shape shape, T fill) {
  return BasicTensor<T>(std::move(shape), fill);
}

enum class ElementwiseKind { add, sub, mul };

template <typename T>
BasicTensor<T> elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b, ElementwiseKind kind);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, ElementwiseKind::add);
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, ElementwiseKind::sub);
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, ElementwiseKind::mul);
}

template <typename T>
bool all_finite(std::span<const T> values) {
  if constexpr (std::is_floating_point_v<T>) {
    for (T v : values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

/// Throws NumericError naming `context` when any element is NaN or infinite.
template <typename T>
void ensure_finite(const BasicTensor<T>& t, std::string_view context) {
  if (!all_finite(t.data())) {
    throw NumericError("non-finite value in " + std::string(context));
  }
}

/// Throws ShapeError unless `t` has rank 3.
template <typename T>
void require_chw(const BasicTensor<T>& t, std::string_view what) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected C x H x W tensor, got " + shape_to_string(t.shape()));
  }
}

/// Throws DataError if any code is >= num_classes and not kUnlabeled.
void validate_labels(const LabelMap& labels, int num_classes);

/**
 * One of the eight symmetries of the square applied to the last two axes.
 * op = rotation + 4 * flip: `rotation` quarter turns counter-clockwise,
 * followed by a horizontal (left-right) mirror when flip is set. Tensors of
 * rank >= 2 are accepted; leading axes are carried along unchanged.
 */
template <typename T>
BasicTensor<T> dihedral(const BasicTensor<T>& t, int op);

/// Index of the op undoing `op`.
int dihedral_inverse(int op);
/// Index of the op equal to applying `first` and then `second`.
int dihedral_compose(int first, int second);

// TSR1 file format: magic "TSR1", dtype code (1 = f32, 2 = u8), rank 1..4,
// rank x u32 little-endian dims, then the row-major payload.
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::uint8_t kDtypeU8 = 2;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
std::vector<std::uint8_t> encode_tensor(const LabelMap& t);
/// Decodes from the front of `bytes`; `consumed` receives the encoded length.
Tensor decode_tensor_f32(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);
LabelMap decode_tensor_u8(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

void write_tensor_file(const Tensor& t, const std::filesystem::path& path);
void write_tensor_file(const LabelMap& t, const std::filesystem::path& path);
Tensor read_tensor_file(const std::filesystem::path& path);
LabelMap read_label_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dfcn
