#ifndef MGMEM_TRAIN_OPTIM_HPP
#define MGMEM_TRAIN_OPTIM_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "mgmem/params.hpp"
#include "mgmem/tensor.hpp"

namespace mgmem {

template <typename T>
struct RMSPropState {
  std::vector<Tensor<T>> v;  // per parameter; empty tensors for non-trainable entries
  double lr = 1e-3;
  double rho = 0.9;
  double eps = 1e-8;

  static RMSPropState init(const ParamSet<T>& ps, double lr = 1e-3, double rho = 0.9, double eps = 1e-8) {
    RMSPropState st;
    st.lr = lr;
    st.rho = rho;
    st.eps = eps;
    for (std::size_t i = 0; i < ps.size(); ++i)
      st.v.push_back(ps.trainable(i) ? Tensor<T>(ps.value(i).shape()) : Tensor<T>());
    return st;
  }
};

/// v <- rho v + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(v) + eps), trainable entries only.
template <typename T>
void rmsprop_step(ParamSet<T>& ps, const std::vector<Tensor<T>>& grads, RMSPropState<T>& st) {
  if (grads.size() != ps.size() || st.v.size() != ps.size())
    throw ShapeError("rmsprop_step: gradient or state count differs from parameter count");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!ps.trainable(i)) continue;
    require_shape(grads[i].shape() == ps.value(i).shape() && st.v[i].shape() == ps.value(i).shape(),
                  "rmsprop_step: shape mismatch for " + ps.name(i));
    require_finite(grads[i], "rmsprop_step gradient");
  }
  const T rho = static_cast<T>(st.rho), one_m = static_cast<T>(1.0 - st.rho);
  const T lr = static_cast<T>(st.lr), eps = static_cast<T>(st.eps);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!ps.trainable(i)) continue;
    T* th = ps.value(i).ptr();
    T* v = st.v[i].ptr();
    const T* g = grads[i].ptr();
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      v[k] = rho * v[k] + one_m * g[k] * g[k];
      th[k] -= lr * g[k] / (std::sqrt(v[k]) + eps);
    }
  }
}

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns the norm before scaling.
template <typename T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& g : grads)
      for (auto& v : g.data()) v *= s;
  }
  return norm;
}

}  // namespace mgmem

#endif  // MGMEM_TRAIN_OPTIM_HPP
