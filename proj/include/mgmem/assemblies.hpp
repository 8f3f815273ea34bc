#ifndef MGMEM_ASSEMBLIES_HPP
#define MGMEM_ASSEMBLIES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mgmem/mglayers.hpp"
#include "mgmem/network_spec.hpp"
#include "mgmem/ops.hpp"
#include "mgmem/params.hpp"

namespace mgmem {

/// State of every recurrent layer of a stack, as values.
template <typename T>
using NetState = std::vector<MGMemoryState<T>>;

/// State of every recurrent layer of a stack, recorded on a tape.
template <typename T>
using LiveNetState = std::vector<LiveState<T>>;

template <typename T>
LiveNetState<T> bind_state(Tape<T>& tape, const NetState<T>& st) {
  LiveNetState<T> live;
  for (const auto& s : st) live.push_back(bind_state(tape, s));
  return live;
}

template <typename T>
NetState<T> snapshot(const LiveNetState<T>& live) {
  NetState<T> st;
  for (const auto& s : live) st.push_back(snapshot(s));
  return st;
}

template <typename T>
std::size_t value_count(const NetState<T>& st) {
  std::size_t n = 0;
  for (const auto& s : st) n += s.value_count();
  return n;
}

struct HeadParams {
  HeadDesc desc;
  std::size_t in_channels = 0;
  std::size_t w = 0, b = 0;
};

template <typename T>
HeadParams make_head(ParamSet<T>& ps, const HeadDesc& h, const PyramidSpec& last, const std::string& prefix,
                     Rng& rng) {
  const auto j = last.find(h.rows, h.cols);
  if (!j) throw SpecError(prefix + ": head grid is not a level of the last layer");
  const std::size_t C = last.levels[*j].channels;
  HeadParams p{h, C, 0, 0};
  if (h.kind == HeadKind::pixel) {
    if (h.crop_rows > 0 && (h.crop_row + h.crop_rows > h.rows || h.crop_col + h.crop_cols > h.cols))
      throw SpecError(prefix + ": head crop window exceeds its grid");
    p.w = ps.add(prefix + ".w", uniform_tensor<T>({3, 3, C, h.outputs}, std::sqrt(3.0 / (9.0 * C)), rng));
  } else {
    const std::size_t n = h.rows * h.cols * C;
    p.w = ps.add(prefix + ".w", uniform_tensor<T>({1, 1, n, h.outputs}, std::sqrt(3.0 / n), rng));
  }
  p.b = ps.add(prefix + ".b", Tensor<T>({1, 1, 1, h.outputs}));
  return p;
}

template <typename T>
Var<T> head_forward(LayerContext<T>& ctx, const HeadParams& p, const Pyramid<T>& last) {
  const Var<T>* src = last.find(p.desc.rows, p.desc.cols);
  if (!src) throw ShapeError("head: missing grid in last layer output");
  if (p.desc.kind == HeadKind::vector) return flatten_affine(*src, ctx.bind(p.w), ctx.bind(p.b));
  Var<T> y = conv2d(*src, ctx.bind(p.w), ctx.bind(p.b));
  if (p.desc.crop_rows > 0) y = crop(y, p.desc.crop_row, p.desc.crop_col, p.desc.crop_rows, p.desc.crop_cols);
  return y;
}

/// Per-resolution channel concatenation of two pyramids ([a, b] order);
/// levels present in only one side pass through.
inline PyramidSpec merge_spec(const PyramidSpec& a, const PyramidSpec& b) {
  std::vector<LevelSpec> all;
  auto put = [&all](const LevelSpec& l) {
    for (auto& e : all)
      if (e.rows == l.rows && e.cols == l.cols) {
        e.channels += l.channels;
        return;
      }
    all.push_back(l);
  };
  for (const auto& l : a.levels) put(l);
  for (const auto& l : b.levels) put(l);
  std::sort(all.begin(), all.end(), [](const LevelSpec& x, const LevelSpec& y) { return x.rows < y.rows; });
  PyramidSpec out{all};
  out.validate();
  return out;
}

template <typename T>
Pyramid<T> merge(const Pyramid<T>& a, const Pyramid<T>& b) {
  std::vector<std::vector<Var<T>>> groups;
  auto put = [&groups](Var<T> v) {
    for (auto& g : groups)
      if (g.front().shape().h == v.shape().h && g.front().shape().w == v.shape().w) {
        g.push_back(v);
        return;
      }
    groups.push_back({v});
  };
  for (const auto& v : a.levels) put(v);
  for (const auto& v : b.levels) put(v);
  std::sort(groups.begin(), groups.end(),
            [](const auto& x, const auto& y) { return x.front().shape().h < y.front().shape().h; });
  Pyramid<T> out;
  for (const auto& g : groups) out.levels.push_back(concat_channels(g));
  return out;
}

template <typename T>
Pyramid<T> input_pyramid(Var<T> x, const PyramidSpec& spec) {
  if (spec.levels.size() != 1) throw SpecError("stack input must be a single grid");
  const auto& l = spec.levels.front();
  const Shape s = x.shape();
  if (s.h != l.rows || s.w != l.cols || s.c != l.channels)
    throw ShapeError("input shape " + s.str() + " does not match the stack input grid");
  return Pyramid<T>{{x}};
}

template <typename T>
NetState<T> zero_state(const std::vector<MGConvLSTMParams>& layers, std::size_t batch) {
  NetState<T> st;
  for (const auto& l : layers) st.push_back(init_state<T>(l.out, batch));
  return st;
}

template <typename T>
void check_state(const std::vector<MGConvLSTMParams>& layers, const LiveNetState<T>& st) {
  if (st.size() != layers.size()) throw ShapeError("state belongs to a network with a different layer count");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (st[k].h.size() != layers[k].out.levels.size()) throw ShapeError("state level count mismatch");
    for (std::size_t j = 0; j < st[k].h.size(); ++j) {
      const auto& l = layers[k].out.levels[j];
      const Shape s = st[k].h[j].shape();
      if (s.h != l.rows || s.w != l.cols || s.c != l.channels) throw ShapeError("state from a different spec");
    }
  }
}

template <typename T>
std::vector<MGConvLSTMParams> build_recurrent(ParamSet<T>& ps, const PyramidSpec& input,
                                              const std::vector<LayerDesc>& layers, const std::string& prefix,
                                              Rng& rng) {
  std::vector<MGConvLSTMParams> out;
  PyramidSpec prev = input;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].kind != LayerKind::lstm) break;
    if (layers[k].norm) throw SpecError(prefix + ": batch norm is not supported inside recurrent layers");
    out.push_back(make_mg_lstm(ps, prev, layers[k].levels, layers[k].residual, prefix + std::to_string(k), rng));
    prev = layers[k].levels;
  }
  return out;
}

/// Value-level result of one network step.
template <typename T>
struct StepOutput {
  std::vector<std::optional<Tensor<T>>> heads;
  NetState<T> state;
};

// ---------------------------------------------------------------------------

/// One MG-conv-LSTM writer holding all memory, plus stateless MG-conv readers
/// whose layer k concatenates the writer's layer-k hidden pyramid.
template <typename T>
class WriterReaderNet {
public:
  struct Reader {
    std::vector<MGConvParams> layers;
    HeadParams head;
  };

  static WriterReaderNet build(const NetworkSpec& spec, Rng& rng) {
    if (spec.kind != NetKind::writer_reader) throw SpecError("not a writer-reader spec");
    WriterReaderNet net;
    net.spec_ = spec;
    const StackDesc& w = spec.memory;
    if (w.layers.empty()) throw SpecError("writer has no layers");
    for (const auto& l : w.layers)
      if (l.kind != LayerKind::lstm) throw SpecError("writer layers must be MG-conv-LSTM");
    net.writer_ = build_recurrent(net.params_, w.input, w.layers, "writer.", rng);
    for (std::size_t r = 0; r < spec.readers.size(); ++r) {
      const StackDesc& rd = spec.readers[r];
      if (rd.layers.size() > w.layers.size())
        throw SpecError("reader " + std::to_string(r) + " is deeper than the writer");
      if (!rd.head) throw SpecError("reader " + std::to_string(r) + " has no head");
      Reader reader;
      PyramidSpec prev = rd.input;
      const std::string prefix = "reader" + std::to_string(r) + ".";
      for (std::size_t k = 0; k < rd.layers.size(); ++k) {
        if (rd.layers[k].kind != LayerKind::conv) throw SpecError("reader layers must be MG-conv");
        const PyramidSpec in = merge_spec(prev, w.layers[k].levels);
        reader.layers.push_back(make_mg_conv(net.params_, in, rd.layers[k].levels, rd.layers[k].residual,
                                             rd.layers[k].norm, prefix + std::to_string(k), rng));
        prev = rd.layers[k].levels;
      }
      reader.head = make_head(net.params_, *rd.head, prev, prefix + "head", rng);
      net.readers_.push_back(std::move(reader));
    }
    return net;
  }

  const NetworkSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  std::size_t reader_count() const { return readers_.size(); }
  const std::vector<MGConvLSTMParams>& writer_layers() const { return writer_; }

  NetState<T> init_state(std::size_t batch) const { return zero_state<T>(writer_, batch); }

  /// Advances every writer layer once, input to deepest. Returns each layer's
  /// output pyramid.
  std::vector<Pyramid<T>> write(LayerContext<T>& ctx, Var<T> in, LiveNetState<T>& st) const {
    check_state(writer_, st);
    std::vector<Pyramid<T>> hidden;
    Pyramid<T> p = input_pyramid(in, spec_.memory.input);
    for (std::size_t k = 0; k < writer_.size(); ++k) {
      p = mg_lstm_forward(ctx, writer_[k], p, st[k]);
      hidden.push_back(p);
    }
    return hidden;
  }

  /// Runs reader r against the writer's hidden pyramids; never touches state.
  Var<T> read(LayerContext<T>& ctx, std::size_t r, Var<T> in, const std::vector<Pyramid<T>>& hidden) const {
    const Reader& rd = readers_.at(r);
    Pyramid<T> p = input_pyramid(in, spec_.readers[r].input);
    for (std::size_t k = 0; k < rd.layers.size(); ++k) {
      Pyramid<T> mem = hidden.at(k);
      if (spec_.detach_readers)
        for (auto& v : mem.levels) v = detach(v);
      p = mg_conv_forward(ctx, rd.layers[k], merge(p, mem));
    }
    return head_forward(ctx, rd.head, p);
  }

  /// Value-level step: the writer advances, then each reader with an input runs.
  StepOutput<T> step(const Tensor<T>& writer_in, const std::vector<std::optional<Tensor<T>>>& reader_ins,
                     const NetState<T>& st, bool training = false) {
    if (reader_ins.size() > readers_.size()) throw ShapeError("more reader inputs than readers");
    Tape<T> tape;
    Binder<T> bind(tape, params_, false);
    LayerContext<T> ctx{bind, params_, training};
    LiveNetState<T> live = mgmem::bind_state(tape, st);
    auto hidden = write(ctx, tape.constant(writer_in), live);
    StepOutput<T> out;
    for (std::size_t r = 0; r < reader_ins.size(); ++r) {
      if (reader_ins[r])
        out.heads.push_back(read(ctx, r, tape.constant(*reader_ins[r]), hidden).value());
      else
        out.heads.push_back(std::nullopt);
    }
    out.state = snapshot(live);
    return out;
  }

private:
  NetworkSpec spec_;
  ParamSet<T> params_;
  std::vector<MGConvLSTMParams> writer_;
  std::vector<Reader> readers_;
};

// ---------------------------------------------------------------------------

/// MG-conv-LSTM encoder and decoder; the decoder's recurrent layers start from
/// a copy of the encoder's final state and are followed by MG-conv layers and
/// a head.
template <typename T>
class EncoderDecoderNet {
public:
  static EncoderDecoderNet build(const NetworkSpec& spec, Rng& rng) {
    if (spec.kind != NetKind::encoder_decoder || !spec.decoder) throw SpecError("not an encoder-decoder spec");
    EncoderDecoderNet net;
    net.spec_ = spec;
    const StackDesc& e = spec.memory;
    const StackDesc& d = *spec.decoder;
    for (const auto& l : e.layers)
      if (l.kind != LayerKind::lstm) throw SpecError("encoder layers must be MG-conv-LSTM");
    std::size_t n_rec = 0;
    while (n_rec < d.layers.size() && d.layers[n_rec].kind == LayerKind::lstm) ++n_rec;
    for (std::size_t k = n_rec; k < d.layers.size(); ++k)
      if (d.layers[k].kind != LayerKind::conv) throw SpecError("decoder MG-conv layers must follow its recurrent layers");
    if (e.layers.empty() || n_rec != e.layers.size())
      throw SpecError("decoder must have one recurrent layer per encoder layer");
    for (std::size_t k = 0; k < n_rec; ++k)
      if (!(d.layers[k].levels == e.layers[k].levels))
        throw SpecError("decoder recurrent layer " + std::to_string(k) + " state spec differs from the encoder's");
    if (!d.head) throw SpecError("decoder has no head");

    net.encoder_ = build_recurrent(net.params_, e.input, e.layers, "encoder.", rng);
    net.decoder_ = build_recurrent(net.params_, d.input, d.layers, "decoder.", rng);
    PyramidSpec prev = d.layers[n_rec - 1].levels;
    for (std::size_t k = n_rec; k < d.layers.size(); ++k) {
      net.post_.push_back(make_mg_conv(net.params_, prev, d.layers[k].levels, d.layers[k].residual,
                                       d.layers[k].norm, "decoder." + std::to_string(k), rng));
      prev = d.layers[k].levels;
    }
    net.head_ = make_head(net.params_, *d.head, prev, "decoder.head", rng);
    return net;
  }

  const NetworkSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  NetState<T> init_state(std::size_t batch) const { return zero_state<T>(encoder_, batch); }

  void encode_step(LayerContext<T>& ctx, Var<T> in, LiveNetState<T>& st) const {
    check_state(encoder_, st);
    Pyramid<T> p = input_pyramid(in, spec_.memory.input);
    for (std::size_t k = 0; k < encoder_.size(); ++k) p = mg_lstm_forward(ctx, encoder_[k], p, st[k]);
  }

  /// One decoder step on a zero input; returns the head logits.
  Var<T> decode_step(LayerContext<T>& ctx, LiveNetState<T>& st) const {
    check_state(decoder_, st);
    const LevelSpec& in = spec_.decoder->input.levels.at(0);
    const std::size_t batch = st.front().h.front().shape().b;
    Pyramid<T> p{{ctx.bind.tape().constant(Tensor<T>({batch, in.rows, in.cols, in.channels}))}};
    for (std::size_t k = 0; k < decoder_.size(); ++k) p = mg_lstm_forward(ctx, decoder_[k], p, st[k]);
    for (const auto& layer : post_) p = mg_conv_forward(ctx, layer, p);
    return head_forward(ctx, head_, p);
  }

  /// Decoder initial state: an exact copy of the encoder's final state.
  NetState<T> transfer(const NetState<T>& encoder_final) const {
    if (encoder_final.size() != decoder_.size()) throw ShapeError("transfer: layer count mismatch");
    for (std::size_t k = 0; k < decoder_.size(); ++k)
      for (std::size_t j = 0; j < decoder_[k].out.levels.size(); ++j) {
        const auto& l = decoder_[k].out.levels[j];
        const Shape s = encoder_final[k].levels.at(j).h.shape();
        if (s.h != l.rows || s.w != l.cols || s.c != l.channels)
          throw ShapeError("transfer: encoder state does not fit decoder layer " + std::to_string(k));
      }
    return encoder_final;
  }

  struct Run {
    NetState<T> encoder_final;
    NetState<T> decoder_initial;
    std::vector<Tensor<T>> outputs;
  };

  /// Value-level encoder-decoder pass producing `out_len` head outputs.
  Run run(const std::vector<Tensor<T>>& in_seq, std::size_t out_len, bool training = false) {
    if (in_seq.empty()) throw std::invalid_argument("run_encoder_decoder: empty input sequence");
    Tape<T> tape;
    Binder<T> bind(tape, params_, false);
    LayerContext<T> ctx{bind, params_, training};
    LiveNetState<T> live = mgmem::bind_state(tape, init_state(in_seq.front().shape().b));
    for (const auto& x : in_seq) encode_step(ctx, tape.constant(x), live);
    Run r;
    r.encoder_final = snapshot(live);
    r.decoder_initial = transfer(r.encoder_final);
    LiveNetState<T> dec = mgmem::bind_state(tape, r.decoder_initial);
    for (std::size_t t = 0; t < out_len; ++t) r.outputs.push_back(decode_step(ctx, dec).value());
    return r;
  }

private:
  NetworkSpec spec_;
  ParamSet<T> params_;
  std::vector<MGConvLSTMParams> encoder_, decoder_;
  std::vector<MGConvParams> post_;
  HeadParams head_;
};

// ---------------------------------------------------------------------------
// Unrolled training passes

template <typename T>
using LossFn = std::function<Var<T>(Var<T> logits, const Tensor<T>& target)>;

template <typename T>
LossFn<T> default_loss() {
  return [](Var<T> z, const Tensor<T>& y) { return bce_logits(z, y); };
}

struct UnrollOptions {
  std::size_t truncation = 128;  // BPTT segment length (writer-reader)
  bool differentiate = true;
  bool training = true;  // batch-norm mode
};

template <typename T>
struct UnrollResult {
  T loss = 0;
  std::vector<Tensor<T>> grads;  // per parameter, summed over segments
  NetState<T> state;
  // outputs[t][r]: head logits of reader r at step t, when it ran.
  std::vector<std::vector<std::optional<Tensor<T>>>> outputs;
};

/// One time step of a writer-reader sequence. Readers run only where an input
/// is given; they contribute loss only where a target is given.
template <typename T>
struct WRStep {
  Tensor<T> writer_in;
  std::vector<std::optional<Tensor<T>>> reader_in;
  std::vector<std::optional<Tensor<T>>> target;
};

template <typename T>
void add_grads(std::vector<Tensor<T>>& acc, std::vector<Tensor<T>> g) {
  if (acc.empty()) {
    acc = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) accumulate(acc[i], g[i]);
}

/// Backpropagation through time over a writer-reader sequence. Segments of
/// `truncation` steps are differentiated separately; state crosses segment
/// boundaries without gradient.
template <typename T>
UnrollResult<T> unroll(WriterReaderNet<T>& net, const std::vector<WRStep<T>>& seq, NetState<T> state,
                       const UnrollOptions& opt = {}, LossFn<T> loss_fn = default_loss<T>()) {
  if (opt.truncation == 0) throw std::invalid_argument("unroll: truncation must be positive");
  UnrollResult<T> res;
  for (std::size_t begin = 0; begin < seq.size(); begin += opt.truncation) {
    const std::size_t end = std::min(seq.size(), begin + opt.truncation);
    Tape<T> tape;
    Binder<T> bind(tape, net.params(), opt.differentiate);
    LayerContext<T> ctx{bind, net.params(), opt.training};
    LiveNetState<T> live = bind_state(tape, state);
    std::vector<Var<T>> losses;
    for (std::size_t t = begin; t < end; ++t) {
      const WRStep<T>& s = seq[t];
      auto hidden = net.write(ctx, tape.constant(s.writer_in), live);
      std::vector<std::optional<Tensor<T>>> outs;
      for (std::size_t r = 0; r < s.reader_in.size(); ++r) {
        if (!s.reader_in[r]) {
          outs.push_back(std::nullopt);
          continue;
        }
        Var<T> z = net.read(ctx, r, tape.constant(*s.reader_in[r]), hidden);
        outs.push_back(z.value());
        if (r < s.target.size() && s.target[r]) losses.push_back(loss_fn(z, *s.target[r]));
      }
      res.outputs.push_back(std::move(outs));
    }
    if (!losses.empty()) {
      Var<T> total = losses.front();
      for (std::size_t k = 1; k < losses.size(); ++k) total = add(total, losses[k]);
      if (!std::isfinite(total.value()[0])) throw NumericError("unroll: non-finite loss");
      res.loss += total.value()[0];
      if (opt.differentiate) {
        tape.backward(total);
        add_grads(res.grads, bind.gradients());
      }
    }
    state = snapshot(live);
  }
  if (res.grads.empty())
    for (std::size_t i = 0; i < net.params().size(); ++i) res.grads.emplace_back(net.params().value(i).shape());
  res.state = std::move(state);
  return res;
}

/// Encoder inputs and per-decoder-step targets (absent targets are unsupervised).
template <typename T>
struct EDSequence {
  std::vector<Tensor<T>> inputs;
  std::vector<std::optional<Tensor<T>>> targets;
};

/// Full backpropagation through an encoder-decoder pass.
template <typename T>
UnrollResult<T> unroll(EncoderDecoderNet<T>& net, const EDSequence<T>& seq, const UnrollOptions& opt = {},
                       LossFn<T> loss_fn = default_loss<T>()) {
  if (seq.inputs.empty()) throw std::invalid_argument("unroll: empty input sequence");
  if (seq.inputs.size() + seq.targets.size() > opt.truncation)
    throw std::invalid_argument("unroll: sequence longer than the truncation cap");
  UnrollResult<T> res;
  Tape<T> tape;
  Binder<T> bind(tape, net.params(), opt.differentiate);
  LayerContext<T> ctx{bind, net.params(), opt.training};
  LiveNetState<T> live = bind_state(tape, net.init_state(seq.inputs.front().shape().b));
  for (const auto& x : seq.inputs) net.encode_step(ctx, tape.constant(x), live);
  std::vector<Var<T>> losses;
  for (std::size_t t = 0; t < seq.targets.size(); ++t) {
    Var<T> z = net.decode_step(ctx, live);
    res.outputs.push_back({z.value()});
    if (seq.targets[t]) losses.push_back(loss_fn(z, *seq.targets[t]));
  }
  if (!losses.empty()) {
    Var<T> total = losses.front();
    for (std::size_t k = 1; k < losses.size(); ++k) total = add(total, losses[k]);
    if (!std::isfinite(total.value()[0])) throw NumericError("unroll: non-finite loss");
    res.loss = total.value()[0];
    if (opt.differentiate) {
      tape.backward(total);
      res.grads = bind.gradients();
    }
  }
  if (res.grads.empty())
    for (std::size_t i = 0; i < net.params().size(); ++i) res.grads.emplace_back(net.params().value(i).shape());
  res.state = snapshot(live);
  return res;
}

}  // namespace mgmem

#endif  // MGMEM_ASSEMBLIES_HPP
