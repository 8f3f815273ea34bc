#ifndef MGMEM_TASKS_ALGORITHMIC_HPP
#define MGMEM_TASKS_ALGORITHMIC_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mgmem/params.hpp"
#include "mgmem/tensor.hpp"

namespace mgmem::tasks {

using BitVector = std::vector<std::uint8_t>;

struct SortInstance {
  std::vector<BitVector> vectors;
  std::vector<float> priorities;
  std::vector<BitVector> target;  // vectors ascending by priority
};

struct RecallInstance {
  std::vector<BitVector> vectors;
  std::size_t query = 0;  // 0-based index of the queried item, < L-1
  BitVector target;       // vectors[query + 1]
};

inline BitVector random_bits(std::size_t d, Rng& rng) {
  BitVector v(d);
  for (auto& b : v) b = static_cast<std::uint8_t>(uniform_index(rng, 2));
  return v;
}

inline std::vector<BitVector> sorted_by_priority(const std::vector<BitVector>& v, const std::vector<float>& p) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<BitVector> out;
  for (std::size_t i : order) out.push_back(v[i]);
  return out;
}

inline SortInstance gen_sort(std::size_t L, std::size_t d, Rng& rng) {
  if (L < 2 || d < 1) throw std::invalid_argument("gen_sort: need L >= 2 and d >= 1");
  SortInstance s;
  for (std::size_t i = 0; i < L; ++i) {
    s.vectors.push_back(random_bits(d, rng));
    float p;
    do {
      p = static_cast<float>(uniform01(rng));
    } while (std::find(s.priorities.begin(), s.priorities.end(), p) != s.priorities.end());
    s.priorities.push_back(p);
  }
  s.target = sorted_by_priority(s.vectors, s.priorities);
  return s;
}

inline RecallInstance gen_recall(std::size_t L, std::size_t d, Rng& rng) {
  if (L < 2 || d < 1) throw std::invalid_argument("gen_recall: need L >= 2 and d >= 1");
  if (d < 63 && (std::uint64_t{1} << d) <= L) throw std::invalid_argument("gen_recall: 2^d must exceed L");
  RecallInstance r;
  while (r.vectors.size() < L) {
    BitVector v = random_bits(d, rng);
    if (std::find(r.vectors.begin(), r.vectors.end(), v) == r.vectors.end()) r.vectors.push_back(std::move(v));
  }
  r.query = uniform_index(rng, L - 1);
  r.target = r.vectors[r.query + 1];
  return r;
}

/// Bits laid out row-major on a rows x cols grid, one channel; rows*cols must equal d.
template <typename T>
Tensor<T> bits_grid(const BitVector& v, std::size_t rows, std::size_t cols) {
  if (rows * cols != v.size()) throw ShapeError("bits_grid: grid does not hold the vector");
  Tensor<T> out({1, rows, cols, 1});
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] ? T(1) : T(0);
  return out;
}

/// Concatenation along the batch axis.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  Shape s = items.front().shape();
  for (const auto& t : items)
    if (!(t.shape() == Shape{s.b, s.h, s.w, s.c})) throw ShapeError("stack_batch: shapes differ");
  const std::size_t per = items.front().size();
  s.b *= items.size();
  Tensor<T> out(s);
  for (std::size_t i = 0; i < items.size(); ++i)
    std::copy(items[i].ptr(), items[i].ptr() + per, out.ptr() + i * per);
  return out;
}

/// Sort encoder input at step t: channel 0 the vector's bits, channel 1 its priority.
template <typename T>
Tensor<T> sort_input(const SortInstance& s, std::size_t t, std::size_t rows, std::size_t cols) {
  const Tensor<T> bits = bits_grid<T>(s.vectors.at(t), rows, cols);
  Tensor<T> out({1, rows, cols, 2});
  for (std::size_t k = 0; k < rows * cols; ++k) {
    out[2 * k] = bits[k];
    out[2 * k + 1] = static_cast<T>(s.priorities[t]);
  }
  return out;
}

/// Recall writer input at step t (t == L is the query step): channel 0 bits,
/// channel 1 a query flag.
template <typename T>
Tensor<T> recall_input(const RecallInstance& r, std::size_t t, std::size_t rows, std::size_t cols) {
  const std::size_t L = r.vectors.size();
  const BitVector& v = t < L ? r.vectors.at(t) : r.vectors.at(r.query);
  const Tensor<T> bits = bits_grid<T>(v, rows, cols);
  Tensor<T> out({1, rows, cols, 2});
  for (std::size_t k = 0; k < rows * cols; ++k) {
    out[2 * k] = bits[k];
    out[2 * k + 1] = t < L ? T(0) : T(1);
  }
  return out;
}

}  // namespace mgmem::tasks

#endif  // MGMEM_TASKS_ALGORITHMIC_HPP
