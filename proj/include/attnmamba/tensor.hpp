#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnmamba {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Live/peak bytes held by tensor storage across the process. Used by the
// benchmark to compare the footprint of attention variants.
namespace memory_stats {
std::size_t current_bytes();
std::size_t peak_bytes();
// Resets the peak to the current live byte count.
void reset_peak();
void on_allocate(std::size_t bytes);
void on_release(std::size_t bytes);
}  // namespace memory_stats

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) {
      throw std::bad_array_new_length();
    }
    T* p = static_cast<T*>(::operator new(n * sizeof(T)));
    memory_stats::on_allocate(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    memory_stats::on_release(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

// Multiply-accumulate counter for matrix products on the current thread.
// Scores-stage complexity claims are asserted against it.
namespace op_counter {
std::uint64_t macs();
void add_macs(std::uint64_t n);
void reset();
}  // namespace op_counter

/// Dense row-major tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, TrackingAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }
  // 2-D literal, e.g. Tensor<double>::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const T> values() const noexcept { return {data_.data(), data_.size()}; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  // Same elements, new shape; numel must agree.
  Tensor reshaped(Shape shape) const;
  void fill(T v);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  Storage data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace attnmamba
