#ifndef MGMEM_OPS_HPP
#define MGMEM_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mgmem/autodiff.hpp"
#include "mgmem/tensor.hpp"

// Differentiable primitives over NHWC tensors. Each forward computes a fresh
// value and registers a backward rule that reads saved values off the tape.

namespace mgmem {

namespace detail {

template <typename T>
T stable_sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
Tape<T>& tape_of(Var<T> v) {
  if (!v.valid()) throw std::invalid_argument("operation on an unbound variable");
  return *v.tape;
}

}  // namespace detail

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Patch matrix of a zero-padded 3x3 neighbourhood: row (b,i,j), column (di*3+dj)*C + c.
template <typename T>
void im2col3(const Tensor<T>& x, RowMat<T>& cols) {
  const Shape s = x.shape();
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  const std::size_t C = s.c;
  cols.setZero(static_cast<Eigen::Index>(s.b * s.h * s.w), static_cast<Eigen::Index>(9 * C));
  T* cp = cols.data();
  const T* xp = x.ptr();
  for (std::size_t b = 0; b < s.b; ++b)
    for (long i = 0; i < H; ++i)
      for (long j = 0; j < W; ++j) {
        T* row = cp + ((b * s.h + i) * s.w + j) * 9 * C;
        for (long di = 0; di < 3; ++di) {
          const long ii = i + di - 1;
          if (ii < 0 || ii >= H) continue;
          for (long dj = 0; dj < 3; ++dj) {
            const long jj = j + dj - 1;
            if (jj < 0 || jj >= W) continue;
            std::copy_n(xp + ((b * s.h + ii) * s.w + jj) * C, C, row + (di * 3 + dj) * C);
          }
        }
      }
}

/// Adjoint of im2col3: scatter-adds patch rows back onto the image.
template <typename T>
void col2im3_add(const RowMat<T>& cols, Tensor<T>& x) {
  const Shape s = x.shape();
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  const std::size_t C = s.c;
  const T* cp = cols.data();
  T* xp = x.ptr();
  for (std::size_t b = 0; b < s.b; ++b)
    for (long i = 0; i < H; ++i)
      for (long j = 0; j < W; ++j) {
        const T* row = cp + ((b * s.h + i) * s.w + j) * 9 * C;
        for (long di = 0; di < 3; ++di) {
          const long ii = i + di - 1;
          if (ii < 0 || ii >= H) continue;
          for (long dj = 0; dj < 3; ++dj) {
            const long jj = j + dj - 1;
            if (jj < 0 || jj >= W) continue;
            T* dst = xp + ((b * s.h + ii) * s.w + jj) * C;
            const T* src = row + (di * 3 + dj) * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
          }
        }
      }
}

}  // namespace detail

/// 3x3 convolution, zero padding 1, stride 1. `w` is (3,3,Cin,Cout); `bias`
/// may be unbound, otherwise (1,1,1,Cout). Computed as a patch-matrix product.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias = {}) {
  using Mat = detail::RowMat<T>;
  using MapC = Eigen::Map<const Mat>;
  using Map = Eigen::Map<Mat>;
  Tape<T>& tape = detail::tape_of(x);
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (!(ws.b == 3 && ws.h == 3)) throw ShapeError("conv2d: kernel must be 3x3, got " + ws.str());
  if (ws.w != xs.c)
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                     std::to_string(ws.w));
  const std::size_t co_n = ws.c;
  if (bias.valid() && !(bias.shape() == Shape{1, 1, 1, co_n}))
    throw ShapeError("conv2d: bias shape " + bias.shape().str());
  require_finite(x.value(), "conv2d input");

  const auto M = static_cast<Eigen::Index>(xs.b * xs.h * xs.w);
  const auto K = static_cast<Eigen::Index>(9 * xs.c), N = static_cast<Eigen::Index>(co_n);
  Tensor<T> out({xs.b, xs.h, xs.w, co_n});
  {
    Mat cols;
    detail::im2col3(x.value(), cols);
    Map o(out.ptr(), M, N);
    o.noalias() = cols * MapC(w.value().ptr(), K, N);
    if (bias.valid()) o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().ptr(), N);
  }

  auto bw = [x, w, bias, M, K, N](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* dx = t.grad_sink(x);
    Tensor<T>* dw = t.grad_sink(w);
    Tensor<T>* db = bias.valid() ? t.grad_sink(bias) : nullptr;
    const MapC G(g.ptr(), M, N);
    if (db) {
      // plain loop: vectorized reductions on unaligned maps change summation order with alignment
      T* d = db->ptr();
      for (Eigen::Index r = 0; r < M; ++r) {
        const T* gr = g.ptr() + r * N;
        for (Eigen::Index c = 0; c < N; ++c) d[c] += gr[c];
      }
    }
    if (dw) {
      Mat cols;
      detail::im2col3(t.value(x), cols);
      Map(dw->ptr(), K, N).noalias() += cols.transpose() * G;
    }
    if (dx) {
      Mat dcols(M, K);
      dcols.noalias() = G * MapC(t.value(w).ptr(), K, N).transpose();
      detail::col2im3_add(dcols, *dx);
    }
  };
  if (bias.valid()) return tape.record(std::move(out), {x, w, bias}, bw, "conv2d");
  return tape.record(std::move(out), {x, w}, bw, "conv2d");
}

/// 2x2 max-pool, stride 2. Ties go to the first element in row-major order.
template <typename T>
Var<T> maxpool2(Var<T> x) {
  Tape<T>& tape = detail::tape_of(x);
  const Shape s = x.shape();
  require_shape(s.h % 2 == 0 && s.w % 2 == 0, "maxpool2: odd spatial extent " + s.str());
  const Shape os{s.b, s.h / 2, s.w / 2, s.c};
  Tensor<T> out(os);
  auto arg = std::make_shared<std::vector<std::uint32_t>>(os.size());
  const Tensor<T>& xv = x.value();
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < os.h; ++i)
      for (std::size_t j = 0; j < os.w; ++j)
        for (std::size_t c = 0; c < s.c; ++c) {
          std::size_t best = xv.index(b, 2 * i, 2 * j, c);
          for (std::size_t di = 0; di < 2; ++di)
            for (std::size_t dj = 0; dj < 2; ++dj) {
              const std::size_t k = xv.index(b, 2 * i + di, 2 * j + dj, c);
              if (xv[k] > xv[best]) best = k;
            }
          const std::size_t o = out.index(b, i, j, c);
          out[o] = xv[best];
          (*arg)[o] = static_cast<std::uint32_t>(best);
        }
  return tape.record(std::move(out), {x},
                     [x, arg](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>* dx = t.grad_sink(x);
                       for (std::size_t o = 0; o < g.size(); ++o) (*dx)[(*arg)[o]] += g[o];
                     },
                     "maxpool2");
}

/// 2x nearest-neighbour upsampling: source row i feeds rows 2i and 2i+1 (0-indexed).
template <typename T>
Var<T> upsample2(Var<T> x) {
  Tape<T>& tape = detail::tape_of(x);
  const Shape s = x.shape();
  Tensor<T> out({s.b, 2 * s.h, 2 * s.w, s.c});
  const Tensor<T>& xv = x.value();
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < 2 * s.h; ++i)
      for (std::size_t j = 0; j < 2 * s.w; ++j) {
        const T* src = xv.ptr() + xv.index(b, i / 2, j / 2, 0);
        std::copy(src, src + s.c, out.ptr() + out.index(b, i, j, 0));
      }
  return tape.record(std::move(out), {x},
                     [x](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>* dx = t.grad_sink(x);
                       const Shape gs = g.shape();
                       for (std::size_t b = 0; b < gs.b; ++b)
                         for (std::size_t i = 0; i < gs.h; ++i)
                           for (std::size_t j = 0; j < gs.w; ++j)
                             for (std::size_t c = 0; c < gs.c; ++c)
                               dx->at(b, i / 2, j / 2, c) += g.at(b, i, j, c);
                     },
                     "upsample2");
}

/// Channel concatenation in list order.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty list");
  Tape<T>& tape = detail::tape_of(xs.front());
  const Shape s0 = xs.front().shape();
  std::size_t total = 0;
  for (const auto& x : xs) {
    require_shape(x.shape().same_spatial(s0), "concat_channels: spatial mismatch " +
                                                  x.shape().str() + " vs " + s0.str());
    total += x.shape().c;
  }
  if (xs.size() == 1) return xs.front();
  Tensor<T> out({s0.b, s0.h, s0.w, total});
  const std::size_t pixels = s0.b * s0.h * s0.w;
  std::size_t off = 0;
  for (const auto& x : xs) {
    const std::size_t c = x.shape().c;
    const T* src = x.value().ptr();
    for (std::size_t p = 0; p < pixels; ++p)
      std::copy(src + p * c, src + (p + 1) * c, out.ptr() + p * total + off);
    off += c;
  }
  return tape.record(std::move(out), xs,
                     [xs, total, pixels](Tape<T>& t, const Tensor<T>& g) {
                       std::size_t off = 0;
                       for (const auto& x : xs) {
                         const std::size_t c = t.value(x).shape().c;
                         if (Tensor<T>* dx = t.grad_sink(x)) {
                           for (std::size_t p = 0; p < pixels; ++p)
                             for (std::size_t k = 0; k < c; ++k)
                               dx->ptr()[p * c + k] += g.ptr()[p * total + off + k];
                         }
                         off += c;
                       }
                     },
                     "concat_channels");
}

/// Channels [begin, begin+count).
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  Tape<T>& tape = detail::tape_of(x);
  const Shape s = x.shape();
  require_shape(begin + count <= s.c && count > 0, "slice_channels: range out of bounds for " + s.str());
  const std::size_t pixels = s.b * s.h * s.w;
  Tensor<T> out({s.b, s.h, s.w, count});
  for (std::size_t p = 0; p < pixels; ++p)
    std::copy(x.value().ptr() + p * s.c + begin, x.value().ptr() + p * s.c + begin + count,
              out.ptr() + p * count);
  return tape.record(std::move(out), {x},
                     [x, begin, count, pixels](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>* dx = t.grad_sink(x);
                       const std::size_t c = dx->shape().c;
                       for (std::size_t p = 0; p < pixels; ++p)
                         for (std::size_t k = 0; k < count; ++k)
                           dx->ptr()[p * c + begin + k] += g.ptr()[p * count + k];
                     },
                     "slice_channels");
}

/// Spatial window [row0, row0+rows) x [col0, col0+cols).
template <typename T>
Var<T> crop(Var<T> x, std::size_t row0, std::size_t col0, std::size_t rows, std::size_t cols) {
  Tape<T>& tape = detail::tape_of(x);
  const Shape s = x.shape();
  require_shape(row0 + rows <= s.h && col0 + cols <= s.w && rows > 0 && cols > 0,
                "crop: window out of bounds for " + s.str());
  Tensor<T> out({s.b, rows, cols, s.c});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const T* src = x.value().ptr() + x.value().index(b, row0 + i, col0 + j, 0);
        std::copy(src, src + s.c, out.ptr() + out.index(b, i, j, 0));
      }
  return tape.record(std::move(out), {x},
                     [x, row0, col0](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>* dx = t.grad_sink(x);
                       const Shape gs = g.shape();
                       for (std::size_t b = 0; b < gs.b; ++b)
                         for (std::size_t i = 0; i < gs.h; ++i)
                           for (std::size_t j = 0; j < gs.w; ++j)
                             for (std::size_t c = 0; c < gs.c; ++c)
                               dx->at(b, row0 + i, col0 + j, c) += g.at(b, i, j, c);
                     },
                     "crop");
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a);
  require_shape(a.shape() == b.shape(), "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  return tape.record(std::move(out), {a, b},
                     [a, b](Tape<T>& t, const Tensor<T>& g) {
                       if (Tensor<T>* da = t.grad_sink(a)) accumulate(*da, g);
                       if (Tensor<T>* db = t.grad_sink(b)) accumulate(*db, g);
                     },
                     "add");
}

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a);
  require_shape(a.shape() == b.shape(),
                "hadamard: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  const T* ap = a.value().ptr();
  const T* bq = b.value().ptr();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = ap[k] * bq[k];
  return tape.record(std::move(out), {a, b},
                     [a, b](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& av = t.value(a);
                       const Tensor<T>& bv = t.value(b);
                       if (Tensor<T>* da = t.grad_sink(a))
                         for (std::size_t k = 0; k < g.size(); ++k) (*da)[k] += g[k] * bv[k];
                       if (Tensor<T>* db = t.grad_sink(b))
                         for (std::size_t k = 0; k < g.size(); ++k) (*db)[k] += g[k] * av[k];
                     },
                     "hadamard");
}

template <typename T>
Var<T> scale(Var<T> x, T alpha) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= alpha;
  return tape.record(std::move(out), {x},
                     [x, alpha](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>* dx = t.grad_sink(x);
                       for (std::size_t k = 0; k < g.size(); ++k) (*dx)[k] += alpha * g[k];
                     },
                     "scale");
}

/// x * v with a per-channel vector v of shape (1,1,1,C) broadcast over space.
template <typename T>
Var<T> scale_channels(Var<T> x, Var<T> v) {
  Tape<T>& tape = detail::tape_of(x);
  const Shape s = x.shape();
  require_shape(v.shape() == Shape{1, 1, 1, s.c}, "scale_channels: vector shape " + v.shape().str() +
                                                       " for input " + s.str());
  Tensor<T> out(s);
  const std::size_t pixels = s.b * s.h * s.w;
  const T* vp = v.value().ptr();
  const T* xp = x.value().ptr();
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t c = 0; c < s.c; ++c) out[p * s.c + c] = xp[p * s.c + c] * vp[c];
  return tape.record(std::move(out), {x, v},
                     [x, v, pixels](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xv = t.value(x);
                       const Tensor<T>& vv = t.value(v);
                       const std::size_t C = vv.size();
                       if (Tensor<T>* dx = t.grad_sink(x))
                         for (std::size_t p = 0; p < pixels; ++p)
                           for (std::size_t c = 0; c < C; ++c) (*dx)[p * C + c] += g[p * C + c] * vv[c];
                       if (Tensor<T>* dv = t.grad_sink(v))
                         for (std::size_t p = 0; p < pixels; ++p)
                           for (std::size_t c = 0; c < C; ++c) (*dv)[c] += g[p * C + c] * xv[p * C + c];
                     },
                     "scale_channels");
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out(x.shape());
  const T* xp = x.value().ptr();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = detail::stable_sigmoid(xp[k]);
  const std::size_t self = tape.size();
  return tape.record(std::move(out), {x},
                     [x, self](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& y = t.value(Var<T>{&t, self});
                       Tensor<T>* dx = t.grad_sink(x);
                       for (std::size_t k = 0; k < g.size(); ++k) (*dx)[k] += g[k] * y[k] * (T(1) - y[k]);
                     },
                     "sigmoid");
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out(x.shape());
  const T* xp = x.value().ptr();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::tanh(xp[k]);
  const std::size_t self = tape.size();
  return tape.record(std::move(out), {x},
                     [x, self](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& y = t.value(Var<T>{&t, self});
                       Tensor<T>* dx = t.grad_sink(x);
                       for (std::size_t k = 0; k < g.size(); ++k) (*dx)[k] += g[k] * (T(1) - y[k] * y[k]);
                     },
                     "tanh");
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out(x.shape());
  const T* xp = x.value().ptr();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::max(T(0), xp[k]);
  return tape.record(std::move(out), {x},
                     [x](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xv = t.value(x);
                       Tensor<T>* dx = t.grad_sink(x);
                       for (std::size_t k = 0; k < g.size(); ++k)
                         if (xv[k] > T(0)) (*dx)[k] += g[k];
                     },
                     "relu");
}

/// Same value, no gradient flow.
template <typename T>
Var<T> detach(Var<T> x) {
  return detail::tape_of(x).constant(x.value());
}

template <typename T>
Var<T> sum(Var<T> x) {
  Tape<T>& tape = detail::tape_of(x);
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return tape.record(Tensor<T>::scalar(acc), {x},
                     [x](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>* dx = t.grad_sink(x);
                       for (auto& v : dx->data()) v += g[0];
                     },
                     "sum");
}

/// Flatten each batch row and apply an affine map: w is (1,1,H*W*C,out),
/// bias (1,1,1,out). Result is (B,1,1,out).
template <typename T>
Var<T> flatten_affine(Var<T> x, Var<T> w, Var<T> bias) {
  Tape<T>& tape = detail::tape_of(x);
  const Shape s = x.shape();
  const std::size_t n = s.h * s.w * s.c;
  const Shape ws = w.shape();
  require_shape(ws.b == 1 && ws.h == 1 && ws.w == n, "flatten_affine: weight " + ws.str() +
                                                         " does not match input " + s.str());
  const std::size_t m = ws.c;
  require_shape(bias.shape() == Shape{1, 1, 1, m}, "flatten_affine: bias shape " + bias.shape().str());
  Tensor<T> out({s.b, 1, 1, m});
  for (std::size_t b = 0; b < s.b; ++b) {
    T* o = out.ptr() + b * m;
    std::copy(bias.value().ptr(), bias.value().ptr() + m, o);
    const T* xr = x.value().ptr() + b * n;
    for (std::size_t k = 0; k < n; ++k) {
      const T xv = xr[k];
      const T* wr = w.value().ptr() + k * m;
      for (std::size_t q = 0; q < m; ++q) o[q] += xv * wr[q];
    }
  }
  return tape.record(std::move(out), {x, w, bias},
                     [x, w, bias, n, m](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xv = t.value(x);
                       const Tensor<T>& wv = t.value(w);
                       Tensor<T>* dx = t.grad_sink(x);
                       Tensor<T>* dw = t.grad_sink(w);
                       Tensor<T>* db = t.grad_sink(bias);
                       const std::size_t B = xv.shape().b;
                       for (std::size_t b = 0; b < B; ++b) {
                         const T* go = g.ptr() + b * m;
                         if (db)
                           for (std::size_t q = 0; q < m; ++q) (*db)[q] += go[q];
                         for (std::size_t k = 0; k < n; ++k) {
                           const T* wr = wv.ptr() + k * m;
                           if (dx) {
                             T acc = 0;
                             for (std::size_t q = 0; q < m; ++q) acc += wr[q] * go[q];
                             (*dx)[b * n + k] += acc;
                           }
                           if (dw) {
                             const T xk = xv[b * n + k];
                             T* dwr = dw->ptr() + k * m;
                             for (std::size_t q = 0; q < m; ++q) dwr[q] += xk * go[q];
                           }
                         }
                       }
                     },
                     "flatten_affine");
}

/// Running statistics and hyperparameters for a batch-norm site. Scale and
/// shift are separate trainable tensors passed to batchnorm().
template <typename T>
struct NormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.9);
  bool training = true;

  explicit NormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
  std::size_t channels() const { return running_mean.size(); }
};

/// Per-channel normalization over (B,H,W). Training mode uses batch
/// statistics and folds them into the running estimates by momentum.
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, NormState<T>& st) {
  Tape<T>& tape = detail::tape_of(x);
  const Shape s = x.shape();
  const std::size_t C = s.c;
  require_shape(st.channels() == C, "batchnorm: state has " + std::to_string(st.channels()) +
                                        " channels, input " + s.str());
  require_shape(gamma.shape() == Shape{1, 1, 1, C} && beta.shape() == Shape{1, 1, 1, C},
                "batchnorm: scale/shift must be (1,1,1,C)");
  const std::size_t N = s.b * s.h * s.w;
  if (N == 0) throw ShapeError("batchnorm: empty batch-spatial extent");
  if (!(st.epsilon > T(0))) throw std::invalid_argument("batchnorm: epsilon must be positive");

  std::vector<T> mean(C, T(0)), var(C, T(0));
  const Tensor<T>& xv = x.value();
  if (st.training) {
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t c = 0; c < C; ++c) mean[c] += xv[p * C + c];
    for (auto& m : mean) m /= T(N);
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t c = 0; c < C; ++c) {
        const T d = xv[p * C + c] - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < C; ++c) {
      const T unbiased = N > 1 ? var[c] / T(N - 1) : T(0);
      var[c] /= T(N);
      st.running_mean[c] = st.momentum * st.running_mean[c] + (T(1) - st.momentum) * mean[c];
      st.running_var[c] = st.momentum * st.running_var[c] + (T(1) - st.momentum) * unbiased;
    }
  } else {
    mean = st.running_mean;
    var = st.running_var;
  }
  auto invstd = std::make_shared<std::vector<T>>(C);
  for (std::size_t c = 0; c < C; ++c) (*invstd)[c] = T(1) / std::sqrt(var[c] + st.epsilon);
  auto xhat = std::make_shared<Tensor<T>>(s);
  Tensor<T> out(s);
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::size_t p = 0; p < N; ++p)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t k = p * C + c;
      (*xhat)[k] = (xv[k] - mean[c]) * (*invstd)[c];
      out[k] = gp[c] * (*xhat)[k] + bp[c];
    }
  const bool training = st.training;
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, invstd, xhat, N, C, training](Tape<T>& t, const Tensor<T>& g) {
                       const T* gp = t.value(gamma).ptr();
                       if (Tensor<T>* dgam = t.grad_sink(gamma))
                         for (std::size_t p = 0; p < N; ++p)
                           for (std::size_t c = 0; c < C; ++c) (*dgam)[c] += g[p * C + c] * (*xhat)[p * C + c];
                       if (Tensor<T>* dbet = t.grad_sink(beta))
                         for (std::size_t p = 0; p < N; ++p)
                           for (std::size_t c = 0; c < C; ++c) (*dbet)[c] += g[p * C + c];
                       Tensor<T>* dx = t.grad_sink(x);
                       if (!dx) return;
                       if (!training) {
                         for (std::size_t p = 0; p < N; ++p)
                           for (std::size_t c = 0; c < C; ++c)
                             (*dx)[p * C + c] += g[p * C + c] * gp[c] * (*invstd)[c];
                         return;
                       }
                       std::vector<T> sum_d(C, T(0)), sum_dx(C, T(0));
                       for (std::size_t p = 0; p < N; ++p)
                         for (std::size_t c = 0; c < C; ++c) {
                           const T d = g[p * C + c] * gp[c];
                           sum_d[c] += d;
                           sum_dx[c] += d * (*xhat)[p * C + c];
                         }
                       for (std::size_t p = 0; p < N; ++p)
                         for (std::size_t c = 0; c < C; ++c) {
                           const std::size_t k = p * C + c;
                           const T d = g[k] * gp[c];
                           (*dx)[k] += (*invstd)[c] / T(N) *
                                       (T(N) * d - sum_d[c] - (*xhat)[k] * sum_dx[c]);
                         }
                     },
                     "batchnorm");
}

/// Pixel-wise binary cross-entropy from logits, summed over (H,W,C) and
/// averaged over the batch. `weight`, when non-empty, masks positions (0/1).
template <typename T>
Var<T> bce_logits(Var<T> logits, const Tensor<T>& target, const Tensor<T>& weight = {}) {
  Tape<T>& tape = detail::tape_of(logits);
  const Shape s = logits.shape();
  require_shape(target.shape() == s, "bce_logits: target shape " + target.shape().str() +
                                         " vs logits " + s.str());
  if (!weight.empty()) require_shape(weight.shape() == s, "bce_logits: weight shape mismatch");
  for (T y : target.data())
    if (y != T(0) && y != T(1)) throw std::invalid_argument("bce_logits: targets must be 0 or 1");
  const T inv_b = T(1) / T(s.b);
  T acc = 0;
  const Tensor<T>& z = logits.value();
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (!weight.empty() && weight[k] == T(0)) continue;
    const T zk = z[k];
    acc += std::max(zk, T(0)) - zk * target[k] + std::log1p(std::exp(-std::abs(zk)));
  }
  acc *= inv_b;
  return tape.record(Tensor<T>::scalar(acc), {logits},
                     [logits, target, weight, inv_b](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& z = t.value(logits);
                       Tensor<T>* dz = t.grad_sink(logits);
                       for (std::size_t k = 0; k < z.size(); ++k) {
                         if (!weight.empty() && weight[k] == T(0)) continue;
                         (*dz)[k] += g[0] * inv_b * (detail::stable_sigmoid(z[k]) - target[k]);
                       }
                     },
                     "bce_logits");
}

}  // namespace mgmem

#endif  // MGMEM_OPS_HPP
