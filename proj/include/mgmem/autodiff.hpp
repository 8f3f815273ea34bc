#ifndef MGMEM_AUTODIFF_HPP
#define MGMEM_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mgmem/tensor.hpp"

namespace mgmem {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Differentiation record. Nodes are appended in evaluation order, so the
/// node list is already a topological order and backward is a reverse scan.
template <typename T>
class Tape {
public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  /// Trainable leaf: receives a gradient on backward.
  Var<T> variable(Tensor<T> v) { return push(std::move(v), true, nullptr); }

  /// Appends the result of a primitive. The node requires a gradient iff any
  /// input does; otherwise the backward rule is dropped.
  Var<T> record(Tensor<T> v, std::initializer_list<Var<T>> inputs, Backward bw, const char* op) {
    return record(std::move(v), std::vector<Var<T>>(inputs), std::move(bw), op);
  }

  Var<T> record(Tensor<T> v, const std::vector<Var<T>>& inputs, Backward bw, const char* op) {
    require_finite(v, op);
    bool rg = false;
    for (const auto& in : inputs) {
      check_owned(in);
      rg = rg || nodes_[in.id].requires_grad;
    }
    return push(std::move(v), rg, rg ? std::move(bw) : nullptr);
  }

  const Tensor<T>& value(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id].requires_grad;
  }

  /// Gradient buffer for v, zero-initialized on first use; null when v does
  /// not take part in differentiation.
  Tensor<T>* grad_sink(Var<T> v) {
    check_owned(v);
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
  }

  /// Gradient accumulated for v by the last backward sweep (null if none reached it).
  const Tensor<T>* grad(Var<T> v) const {
    check_owned(v);
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  /// Reverse sweep from a scalar loss. The record is consumed: backward rules
  /// are released and a second call throws.
  void backward(Var<T> loss) {
    check_owned(loss);
    if (consumed_) throw std::logic_error("backward: record already consumed");
    if (nodes_[loss.id].value.size() != 1)
      throw ShapeError("backward: loss is not a scalar, shape " + nodes_[loss.id].value.shape().str());
    consumed_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    grad_sink(loss)->fill(T(1));
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.backward && !n.grad.empty()) {
        // Rules may append to other nodes' grads but never to this one.
        n.backward(*this, n.grad);
      }
      n.backward = nullptr;
    }
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var<T> push(Tensor<T> v, bool rg, Backward bw) {
    if (consumed_) throw std::logic_error("tape: recording after backward");
    nodes_.push_back(Node{std::move(v), {}, std::move(bw), rg});
    return Var<T>{this, nodes_.size() - 1};
  }

  void check_owned(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size())
      throw std::invalid_argument("node is not part of this differentiation record");
  }

  std::deque<Node> nodes_;  // stable references across push_back
  bool consumed_ = false;
};

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (std::size_t k = 0; k < dst.size(); ++k) d[k] += s[k];
}

/// Central-difference gradient check. `f` builds a scalar on the given tape
/// from leaves bound to `inputs`. Returns the largest
/// |g_a - g_n| / max(|g_a|, |g_n|, 1e-8) over every input coordinate.
template <typename F>
double grad_check(F&& f, std::vector<Tensor<double>> inputs, double h = 1e-4) {
  if (!(h >= 1e-4 && h <= 1e-2)) throw std::invalid_argument("grad_check: step must lie in [1e-4, 1e-2]");
  auto eval = [&](bool with_grad, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(inputs.size());
    for (const auto& x : inputs) vars.push_back(with_grad ? tape.variable(x) : tape.constant(x));
    Var<double> out = f(tape, vars);
    if (out.value().size() != 1) throw ShapeError("grad_check: function is not scalar");
    double y = out.value()[0];
    if (!std::isfinite(y)) throw NumericError("grad_check: non-finite function value");
    if (grads) {
      tape.backward(out);
      grads->clear();
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor<double>* g = tape.grad(vars[i]);
        grads->push_back(g ? *g : Tensor<double>(inputs[i].shape()));
      }
    }
    return y;
  };

  std::vector<Tensor<double>> analytic;
  eval(true, &analytic);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double x0 = inputs[i][k];
      inputs[i][k] = x0 + h;
      const double up = eval(false, nullptr);
      inputs[i][k] = x0 - h;
      const double down = eval(false, nullptr);
      inputs[i][k] = x0;
      const double gn = (up - down) / (2.0 * h);
      const double ga = analytic[i][k];
      const double denom = std::max({std::abs(ga), std::abs(gn), 1e-8});
      worst = std::max(worst, std::abs(ga - gn) / denom);
    }
  }
  return worst;
}

}  // namespace mgmem

#endif  // MGMEM_AUTODIFF_HPP
