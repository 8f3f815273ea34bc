#ifndef MGMEM_TRAIN_CHECKPOINT_HPP
#define MGMEM_TRAIN_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mgmem/network_spec.hpp"
#include "mgmem/tasks/episode_io.hpp"
#include "mgmem/train/optim.hpp"
#include "mgmem/train/runner.hpp"

// Checkpoint files, little-endian:
//   "MGMC" | u32 version | u32 len + network spec JSON
//   | u32 count | count x tensor                      parameters
//   | f64 lr, rho, eps | u32 count | count x tensor   RMSProp accumulators
//   | u32 len + RNG state text | u64 step | u32 len + training config JSON (may be empty)
// tensor: u32 name length | name | u32 rank | u32 dims[rank] | f32 values

namespace mgmem {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct CheckpointData {
  NetworkSpec spec;
  std::vector<NamedTensor> params;
  double lr = 1e-3, rho = 0.9, eps = 1e-8;
  std::vector<NamedTensor> opt_v;
  std::string rng_state;
  std::uint64_t step = 0;
  std::string config_json;
};

namespace io {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  tasks::io::put_u32(os, static_cast<std::uint32_t>(v));
  tasks::io::put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = tasks::io::get_u32(is);
  return lo | static_cast<std::uint64_t>(tasks::io::get_u32(is)) << 32;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

inline double get_f64(std::istream& is) {
  const std::uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

inline void put_string(std::ostream& os, const std::string& s) {
  tasks::io::put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::uint32_t max = 1u << 26) {
  const std::uint32_t n = tasks::io::get_u32(is);
  if (n > max) throw tasks::FormatError("implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw tasks::FormatError("truncated file");
  return s;
}

inline void put_tensor(std::ostream& os, const NamedTensor& t) {
  put_string(os, t.name);
  const Shape s = t.value.shape();
  tasks::io::put_u32(os, 4);
  for (std::size_t d : {s.b, s.h, s.w, s.c}) tasks::io::put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.value.data()) tasks::io::put_f32(os, v);
}

inline NamedTensor get_tensor(std::istream& is) {
  NamedTensor t;
  t.name = get_string(is, 4096);
  const std::uint32_t rank = tasks::io::get_u32(is);
  if (rank != 4) throw tasks::FormatError("tensor " + t.name + " has rank " + std::to_string(rank));
  std::uint32_t d[4];
  for (auto& x : d) x = tasks::io::get_u32(is);
  const Shape s{d[0], d[1], d[2], d[3]};
  if (s.size() > (1u << 28)) throw tasks::FormatError("implausible tensor size");
  std::vector<float> v(s.size());
  for (auto& x : v) x = tasks::io::get_f32(is);
  t.value = Tensor<float>(s, std::move(v));
  return t;
}

}  // namespace io

inline void write_checkpoint(std::ostream& os, const CheckpointData& c) {
  os.write("MGMC", 4);
  tasks::io::put_u32(os, kCheckpointVersion);
  io::put_string(os, to_json_value(c.spec).dump());
  tasks::io::put_u32(os, static_cast<std::uint32_t>(c.params.size()));
  for (const auto& t : c.params) io::put_tensor(os, t);
  io::put_f64(os, c.lr);
  io::put_f64(os, c.rho);
  io::put_f64(os, c.eps);
  tasks::io::put_u32(os, static_cast<std::uint32_t>(c.opt_v.size()));
  for (const auto& t : c.opt_v) io::put_tensor(os, t);
  io::put_string(os, c.rng_state);
  io::put_u64(os, c.step);
  io::put_string(os, c.config_json);
  if (!os) throw std::runtime_error("write_checkpoint: stream error");
}

inline CheckpointData read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MGMC", 4) != 0) throw tasks::FormatError("not a checkpoint file");
  const std::uint32_t version = tasks::io::get_u32(is);
  if (version != kCheckpointVersion)
    throw tasks::FormatError("unsupported checkpoint version " + std::to_string(version));
  CheckpointData c;
  const std::string spec = io::get_string(is);
  try {
    c.spec = network_spec_from_json(json::parse(spec));
  } catch (const json::exception& e) {
    throw tasks::FormatError(std::string("bad network spec in checkpoint: ") + e.what());
  }
  const std::uint32_t n = tasks::io::get_u32(is);
  for (std::uint32_t k = 0; k < n; ++k) c.params.push_back(io::get_tensor(is));
  c.lr = io::get_f64(is);
  c.rho = io::get_f64(is);
  c.eps = io::get_f64(is);
  const std::uint32_t m = tasks::io::get_u32(is);
  for (std::uint32_t k = 0; k < m; ++k) c.opt_v.push_back(io::get_tensor(is));
  c.rng_state = io::get_string(is);
  c.step = io::get_u64(is);
  c.config_json = io::get_string(is);
  return c;
}

inline void save_checkpoint(const std::string& path, const CheckpointData& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  write_checkpoint(f, c);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  return read_checkpoint(f);
}

inline std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw tasks::FormatError("bad RNG state");
  return rng;
}

template <typename T>
CheckpointData make_checkpoint(const Model<T>& model, const RMSPropState<T>& opt, const Rng& rng, std::uint64_t step,
                               const std::string& config_json = {}) {
  CheckpointData c;
  c.spec = model.spec();
  const ParamSet<T>& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) c.params.push_back({ps.name(i), ps.value(i).template cast<float>()});
  c.lr = opt.lr;
  c.rho = opt.rho;
  c.eps = opt.eps;
  for (std::size_t i = 0; i < opt.v.size(); ++i) c.opt_v.push_back({ps.name(i), opt.v[i].template cast<float>()});
  c.rng_state = rng_to_string(rng);
  c.step = step;
  c.config_json = config_json;
  return c;
}

/// Rebuilds the network from the stored spec and loads every parameter by name.
template <typename T>
Model<T> restore_model(const CheckpointData& c) {
  Rng scratch(0);
  Model<T> m = Model<T>::build(c.spec, scratch);
  ParamSet<T>& ps = m.params();
  if (c.params.size() != ps.size())
    throw tasks::FormatError("checkpoint holds " + std::to_string(c.params.size()) + " tensors, network has " +
                             std::to_string(ps.size()));
  for (const auto& t : c.params) {
    const auto idx = ps.find(t.name);
    if (!idx) throw tasks::FormatError("checkpoint tensor " + t.name + " is not a network parameter");
    if (!(ps.value(*idx).shape() == t.value.shape()))
      throw tasks::FormatError("checkpoint tensor " + t.name + " has shape " + t.value.shape().str());
    ps.value(*idx) = t.value.template cast<T>();
  }
  return m;
}

template <typename T>
RMSPropState<T> restore_optimizer(const CheckpointData& c, const ParamSet<T>& ps) {
  RMSPropState<T> st = RMSPropState<T>::init(ps, c.lr, c.rho, c.eps);
  if (c.opt_v.size() != ps.size()) throw tasks::FormatError("optimizer state count differs from parameter count");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (c.opt_v[i].name != ps.name(i) || !(c.opt_v[i].value.shape() == st.v[i].shape()))
      throw tasks::FormatError("optimizer state does not match parameter " + ps.name(i));
    st.v[i] = c.opt_v[i].value.template cast<T>();
  }
  return st;
}

}  // namespace mgmem

#endif  // MGMEM_TRAIN_CHECKPOINT_HPP
