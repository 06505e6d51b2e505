#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace glyphspot {

/// Raised by tensor ops on incompatible operands; names the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const std::vector<int>& shape);
[[noreturn]] void throw_shape_error(const std::string& op, const std::vector<int>& a,
                                    const std::vector<int>& b);

/// 64-byte aligned storage. Vectorized kernels peel unaligned heads, so the
/// rounding of a reduction would otherwise depend on where the heap put a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor of rank <= 4. Feature maps are laid out [H, W, C],
/// batches of maps [N, H, W, C], matrices [rows, cols].
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_rank();
    data_.assign(count(shape_), fill);
  }
  Tensor(std::vector<int> shape, const std::vector<T>& values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    check_size();
  }
  Tensor(std::vector<int> shape, AlignedVector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_size();
  }
  Tensor(std::vector<int> shape, std::initializer_list<T> values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    check_size();
  }

 private:
  void check_size() const {
    check_rank();
    if (data_.size() != count(shape_))
      throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " +
                       shape_string(shape_));
  }

 public:
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Element of a rank-3 [H, W, C] tensor.
  T& at(int h, int w, int c) {
    return data_[(static_cast<std::size_t>(h) * shape_[1] + w) * shape_[2] + c];
  }
  const T& at(int h, int w, int c) const {
    return data_[(static_cast<std::size_t>(h) * shape_[1] + w) * shape_[2] + c];
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != data_.size()) throw_shape_error("reshape", shape_, shape);
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    AlignedVector<U> v(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(v));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("Tensor: negative dimension in " + shape_string(shape));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  void check_rank() const {
    if (shape_.size() > 4) throw ShapeError("Tensor: rank > 4: " + shape_string(shape_));
  }

  std::vector<int> shape_;
  AlignedVector<T> data_;
};

}  // namespace glyphspot
