#ifndef MGMEM_TENSOR_HPP
#define MGMEM_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mgmem {

class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Four-axis extent: (batch, rows, cols, channels). Kernels reuse the same
/// container as (kh, kw, cin, cout).
struct Shape {
  std::size_t b = 0, h = 0, w = 0, c = 0;

  constexpr std::size_t size() const { return b * h * w * c; }
  constexpr bool same_spatial(const Shape& o) const {
    return b == o.b && h == o.h && w == o.w;
  }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '[' << b << ',' << h << ',' << w << ',' << c << ']';
    return os.str();
  }
};

template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.size())
      throw ShapeError("tensor value count " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor scalar(T v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  std::size_t index(std::size_t b, std::size_t i, std::size_t j, std::size_t c) const {
    return ((b * shape_.h + i) * shape_.w + j) * shape_.c + c;
  }
  T& at(std::size_t b, std::size_t i, std::size_t j, std::size_t c) { return data_[index(b, i, j, c)]; }
  const T& at(std::size_t b, std::size_t i, std::size_t j, std::size_t c) const {
    return data_[index(b, i, j, c)];
  }
  T& operator[](std::size_t k) { return data_[k]; }
  const T& operator[](std::size_t k) const { return data_[k]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.ptr(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  Shape shape_{};
  std::vector<T> data_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

/// Largest elementwise absolute difference; shapes must agree.
template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(), "max_abs_diff: shape mismatch " + a.shape().str() +
                                            " vs " + b.shape().str());
  T m = 0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace mgmem

#endif  // MGMEM_TENSOR_HPP
