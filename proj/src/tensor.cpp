#include "attnmamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace attnmamba {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace memory_stats {
namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

std::size_t current_bytes() { return g_current.load(std::memory_order_relaxed); }
std::size_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() { g_peak.store(g_current.load(std::memory_order_relaxed)); }

void on_allocate(std::size_t bytes) {
  const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void on_release(std::size_t bytes) { g_current.fetch_sub(bytes, std::memory_order_relaxed); }
}  // namespace memory_stats

namespace op_counter {
namespace {
thread_local std::uint64_t t_macs = 0;
}
std::uint64_t macs() { return t_macs; }
void add_macs(std::uint64_t n) { t_macs += n; }
void reset() { t_macs = 0; }
}  // namespace op_counter

namespace {
void check_extents(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
  }
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
  check_extents(shape_);
  if (values.size() != shape_numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_.assign(values.begin(), values.end());
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<T> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values));
}

template <typename T>
std::size_t Tensor<T>::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("tensor index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(index)];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(index)];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  Tensor out = *this;
  check_extents(shape);
  out.shape_ = std::move(shape);
  return out;
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace attnmamba
