#ifndef MGMEM_MGLAYERS_HPP
#define MGMEM_MGLAYERS_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mgmem/autodiff.hpp"
#include "mgmem/ops.hpp"
#include "mgmem/params.hpp"
#include "mgmem/tensor.hpp"

namespace mgmem {

struct LevelSpec {
  std::size_t rows = 0, cols = 0, channels = 0;
  friend bool operator==(const LevelSpec&, const LevelSpec&) = default;
};

/// Levels ordered coarsest first; each level doubles the previous one per side.
struct PyramidSpec {
  std::vector<LevelSpec> levels;

  void validate() const {
    if (levels.empty()) throw ShapeError("pyramid spec has no levels");
    for (std::size_t j = 0; j < levels.size(); ++j) {
      const auto& l = levels[j];
      if (l.rows == 0 || l.cols == 0 || l.channels == 0)
        throw ShapeError("pyramid level " + std::to_string(j) + " has a zero extent");
      if (j > 0 && (l.rows != 2 * levels[j - 1].rows || l.cols != 2 * levels[j - 1].cols))
        throw ShapeError("pyramid level " + std::to_string(j) +
                         " does not double the resolution of the level below it");
    }
  }

  std::optional<std::size_t> find(std::size_t rows, std::size_t cols) const {
    for (std::size_t j = 0; j < levels.size(); ++j)
      if (levels[j].rows == rows && levels[j].cols == cols) return j;
    return std::nullopt;
  }

  /// Same geometry with every spatial extent doubled.
  PyramidSpec doubled() const {
    PyramidSpec out = *this;
    for (auto& l : out.levels) {
      l.rows *= 2;
      l.cols *= 2;
    }
    return out;
  }

  friend bool operator==(const PyramidSpec&, const PyramidSpec&) = default;
};

/// Per-level activations, coarsest first.
template <typename T>
struct Pyramid {
  std::vector<Var<T>> levels;

  const Var<T>* find(std::size_t rows, std::size_t cols) const {
    for (const auto& v : levels)
      if (v.shape().h == rows && v.shape().w == cols) return &v;
    return nullptr;
  }
};

template <typename T>
struct LevelState {
  Tensor<T> h, c;
  friend bool operator==(const LevelState&, const LevelState&) = default;
};

/// Hidden and cell state of one MG-conv-LSTM layer, as plain values.
template <typename T>
struct MGMemoryState {
  std::vector<LevelState<T>> levels;

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.h.size() + l.c.size();
    return n;
  }
  friend bool operator==(const MGMemoryState&, const MGMemoryState&) = default;
};

/// Hidden and cell state of one layer while recorded on a tape.
template <typename T>
struct LiveState {
  std::vector<Var<T>> h, c;
};

template <typename T>
MGMemoryState<T> init_state(const PyramidSpec& spec, std::size_t batch) {
  spec.validate();
  MGMemoryState<T> st;
  for (const auto& l : spec.levels) {
    const Shape s{batch, l.rows, l.cols, l.channels};
    st.levels.push_back({Tensor<T>(s), Tensor<T>(s)});
  }
  return st;
}

template <typename T>
LiveState<T> bind_state(Tape<T>& tape, const MGMemoryState<T>& st) {
  LiveState<T> live;
  for (const auto& l : st.levels) {
    live.h.push_back(tape.constant(l.h));
    live.c.push_back(tape.constant(l.c));
  }
  return live;
}

template <typename T>
MGMemoryState<T> snapshot(const LiveState<T>& live) {
  MGMemoryState<T> st;
  for (std::size_t j = 0; j < live.h.size(); ++j) st.levels.push_back({live.h[j].value(), live.c[j].value()});
  return st;
}

/// Channel count of the assembled input for an output grid of the given size:
/// the sum over the coarser (rows/2), same, and finer (2*rows) input levels present.
inline std::size_t assembled_channels(const PyramidSpec& in, std::size_t rows, std::size_t cols) {
  std::size_t n = 0;
  if (rows % 2 == 0 && cols % 2 == 0)
    if (auto j = in.find(rows / 2, cols / 2)) n += in.levels[*j].channels;
  if (auto j = in.find(rows, cols)) n += in.levels[*j].channels;
  if (auto j = in.find(rows * 2, cols * 2)) n += in.levels[*j].channels;
  return n;
}

/// (up h_coarser) ++ (h_same) ++ (down h_finer) for an output grid of
/// rows x cols; absent neighbours are dropped from the concatenation.
template <typename T>
Var<T> assemble_input(const Pyramid<T>& p, std::size_t rows, std::size_t cols) {
  std::vector<Var<T>> parts;
  if (rows % 2 == 0 && cols % 2 == 0)
    if (const Var<T>* coarse = p.find(rows / 2, cols / 2)) parts.push_back(upsample2(*coarse));
  if (const Var<T>* same = p.find(rows, cols)) parts.push_back(*same);
  if (const Var<T>* fine = p.find(rows * 2, cols * 2)) parts.push_back(maxpool2(*fine));
  if (parts.empty())
    throw ShapeError("assemble_input: no input level neighbours a " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " grid");
  return concat_channels(parts);
}

/// Assembled input for level j of the pyramid itself.
template <typename T>
Var<T> assemble_input(const Pyramid<T>& p, std::size_t j) {
  if (j >= p.levels.size()) throw ShapeError("assemble_input: level out of range");
  const Shape s = p.levels[j].shape();
  return assemble_input(p, s.h, s.w);
}

/// Mutable per-pass context shared by the layer forwards.
template <typename T>
struct LayerContext {
  Binder<T>& bind;
  ParamSet<T>& params;
  bool training = true;
};

// ---------------------------------------------------------------------------
// MG-conv

enum class Activation { relu, none };

struct MGConvLevel {
  LevelSpec out;
  std::size_t in_channels = 0;
  std::size_t w = 0, b = 0;
  // Batch-norm site (all set or none).
  std::optional<std::size_t> gamma, beta, running_mean, running_var;
};

struct MGConvParams {
  PyramidSpec in, out;
  bool residual = false;
  bool norm = false;
  Activation activation = Activation::relu;
  std::vector<MGConvLevel> levels;
};

template <typename T>
MGConvParams make_mg_conv(ParamSet<T>& ps, const PyramidSpec& in, const PyramidSpec& out, bool residual,
                          bool norm, const std::string& prefix, Rng& rng) {
  in.validate();
  out.validate();
  MGConvParams p{in, out, residual, norm, Activation::relu, {}};
  for (std::size_t j = 0; j < out.levels.size(); ++j) {
    const LevelSpec& lv = out.levels[j];
    const std::size_t cin = assembled_channels(in, lv.rows, lv.cols);
    if (cin == 0)
      throw ShapeError(prefix + ": output level " + std::to_string(j) + " has no neighbouring input level");
    const std::string name = prefix + ".l" + std::to_string(j);
    MGConvLevel l{lv, cin, 0, 0, {}, {}, {}, {}};
    const double bound = std::sqrt(3.0 / (9.0 * static_cast<double>(cin)));
    l.w = ps.add(name + ".w", uniform_tensor<T>({3, 3, cin, lv.channels}, bound, rng));
    l.b = ps.add(name + ".b", Tensor<T>({1, 1, 1, lv.channels}));
    if (norm) {
      l.gamma = ps.add(name + ".bn.gamma", Tensor<T>({1, 1, 1, lv.channels}, T(1)));
      l.beta = ps.add(name + ".bn.beta", Tensor<T>({1, 1, 1, lv.channels}));
      l.running_mean = ps.add(name + ".bn.mean", Tensor<T>({1, 1, 1, lv.channels}), false);
      l.running_var = ps.add(name + ".bn.var", Tensor<T>({1, 1, 1, lv.channels}, T(1)), false);
    }
    p.levels.push_back(l);
  }
  return p;
}

template <typename T>
Var<T> apply_norm(LayerContext<T>& ctx, Var<T> x, std::size_t gamma, std::size_t beta, std::size_t rm,
                  std::size_t rv) {
  NormState<T> st(x.shape().c);
  Tensor<T>& mean = ctx.params.value(rm);
  Tensor<T>& var = ctx.params.value(rv);
  st.running_mean.assign(mean.data().begin(), mean.data().end());
  st.running_var.assign(var.data().begin(), var.data().end());
  st.training = ctx.training;
  Var<T> y = batchnorm(x, ctx.bind(gamma), ctx.bind(beta), st);
  std::copy(st.running_mean.begin(), st.running_mean.end(), mean.ptr());
  std::copy(st.running_var.begin(), st.running_var.end(), var.ptr());
  return y;
}

/// conv -> optional batch norm -> activation -> optional residual, per output level.
template <typename T>
Pyramid<T> mg_conv_forward(LayerContext<T>& ctx, const MGConvParams& p, const Pyramid<T>& in) {
  Pyramid<T> out;
  for (const auto& l : p.levels) {
    Var<T> x = assemble_input(in, l.out.rows, l.out.cols);
    if (x.shape().c != l.in_channels)
      throw ShapeError("mg_conv_forward: assembled input has " + std::to_string(x.shape().c) +
                       " channels, layer expects " + std::to_string(l.in_channels));
    Var<T> y = conv2d(x, ctx.bind(l.w), ctx.bind(l.b));
    if (l.gamma) y = apply_norm(ctx, y, *l.gamma, *l.beta, *l.running_mean, *l.running_var);
    if (p.activation == Activation::relu) y = relu(y);
    if (p.residual)
      if (const Var<T>* skip = in.find(l.out.rows, l.out.cols); skip && skip->shape() == y.shape())
        y = add(y, *skip);
    out.levels.push_back(y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// MG-conv-LSTM

/// Per-level weights. Input and recurrent kernels hold the four gates as
/// channel blocks [i, f, c, o] of the output; peepholes are per-channel.
struct MGLstmLevel {
  LevelSpec out;
  std::size_t in_channels = 0;
  std::size_t wx = 0, wh = 0, b = 0;
  std::size_t wci = 0, wcf = 0, wco = 0;
};

struct MGConvLSTMParams {
  PyramidSpec in, out;
  bool residual = false;
  std::vector<MGLstmLevel> levels;
};

/// Trainable scalars per level: 9*Cin*4C + 9*C*4C + 4C + 3C.
inline std::size_t lstm_level_param_count(std::size_t cin, std::size_t c) {
  return 9 * cin * 4 * c + 9 * c * 4 * c + 4 * c + 3 * c;
}

template <typename T>
MGConvLSTMParams make_mg_lstm(ParamSet<T>& ps, const PyramidSpec& in, const PyramidSpec& out, bool residual,
                              const std::string& prefix, Rng& rng) {
  in.validate();
  out.validate();
  MGConvLSTMParams p{in, out, residual, {}};
  for (std::size_t j = 0; j < out.levels.size(); ++j) {
    const LevelSpec& lv = out.levels[j];
    const std::size_t cin = assembled_channels(in, lv.rows, lv.cols);
    if (cin == 0)
      throw ShapeError(prefix + ": output level " + std::to_string(j) + " has no neighbouring input level");
    const std::size_t C = lv.channels;
    const std::string name = prefix + ".l" + std::to_string(j);
    const double bound = std::sqrt(3.0 / (9.0 * static_cast<double>(cin + C)));
    MGLstmLevel l{lv, cin, 0, 0, 0, 0, 0, 0};
    l.wx = ps.add(name + ".wx", uniform_tensor<T>({3, 3, cin, 4 * C}, bound, rng));
    l.wh = ps.add(name + ".wh", uniform_tensor<T>({3, 3, C, 4 * C}, bound, rng));
    Tensor<T> bias({1, 1, 1, 4 * C});
    for (std::size_t c = C; c < 2 * C; ++c) bias[c] = T(1);  // forget gate
    l.b = ps.add(name + ".b", std::move(bias));
    l.wci = ps.add(name + ".wci", Tensor<T>({1, 1, 1, C}));
    l.wcf = ps.add(name + ".wcf", Tensor<T>({1, 1, 1, C}));
    l.wco = ps.add(name + ".wco", Tensor<T>({1, 1, 1, C}));
    p.levels.push_back(l);
  }
  return p;
}

/// One time step of a multigrid conv-LSTM layer. Returns the output pyramid;
/// `state` is advanced in place to (h', c').
template <typename T>
Pyramid<T> mg_lstm_forward(LayerContext<T>& ctx, const MGConvLSTMParams& p, const Pyramid<T>& in,
                           LiveState<T>& state) {
  if (state.h.size() != p.levels.size() || state.c.size() != p.levels.size())
    throw ShapeError("mg_lstm_forward: state has " + std::to_string(state.h.size()) +
                     " levels, layer has " + std::to_string(p.levels.size()));
  Pyramid<T> out;
  for (std::size_t j = 0; j < p.levels.size(); ++j) {
    const MGLstmLevel& l = p.levels[j];
    const std::size_t C = l.out.channels;
    const Var<T> h_prev = state.h[j];
    const Var<T> c_prev = state.c[j];
    if (h_prev.shape().h != l.out.rows || h_prev.shape().w != l.out.cols || h_prev.shape().c != C ||
        !(c_prev.shape() == h_prev.shape()))
      throw ShapeError("mg_lstm_forward: state level " + std::to_string(j) + " has shape " +
                       h_prev.shape().str());
    Var<T> x = assemble_input(in, l.out.rows, l.out.cols);
    if (x.shape().c != l.in_channels)
      throw ShapeError("mg_lstm_forward: assembled input has " + std::to_string(x.shape().c) +
                       " channels, layer expects " + std::to_string(l.in_channels));
    if (x.shape().b != h_prev.shape().b) throw ShapeError("mg_lstm_forward: batch size differs from state");

    Var<T> z = add(conv2d(x, ctx.bind(l.wx), ctx.bind(l.b)), conv2d(h_prev, ctx.bind(l.wh)));
    Var<T> gi = sigmoid(add(slice_channels(z, 0, C), scale_channels(c_prev, ctx.bind(l.wci))));
    Var<T> gf = sigmoid(add(slice_channels(z, C, C), scale_channels(c_prev, ctx.bind(l.wcf))));
    Var<T> cand = tanh(slice_channels(z, 2 * C, C));
    Var<T> c_new = add(hadamard(gf, c_prev), hadamard(gi, cand));
    Var<T> go = sigmoid(add(slice_channels(z, 3 * C, C), scale_channels(c_new, ctx.bind(l.wco))));
    Var<T> h_new = hadamard(go, tanh(c_new));

    state.h[j] = h_new;
    state.c[j] = c_new;
    Var<T> y = h_new;
    if (p.residual)
      if (const Var<T>* skip = in.find(l.out.rows, l.out.cols); skip && skip->shape() == y.shape())
        y = add(y, *skip);
    out.levels.push_back(y);
  }
  return out;
}

}  // namespace mgmem

#endif  // MGMEM_MGLAYERS_HPP
