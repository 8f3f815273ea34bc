#ifndef MGMEM_TRAIN_CONFIG_HPP
#define MGMEM_TRAIN_CONFIG_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mgmem/network_spec.hpp"
#include "mgmem/tasks/episode_io.hpp"

namespace mgmem {

struct VectorTaskParams {
  std::size_t length = 8;
  std::size_t dims = 6;
  std::size_t rows = 2, cols = 3;  // grid holding one vector; rows * cols == dims
};

struct MappingParams {
  int world = 9;
  double wall_density = 0.0;
  tasks::Motion motion = tasks::Motion::spiral;
  std::size_t steps = 81;  // trajectory length
  int observe = 3;         // m
  int query = 3;           // k
  int margin = 0;          // spiral region margin
  std::size_t t_min = 3;   // first supervised step, 1-based
  bool resample_query = true;
};

struct TrainConfig {
  tasks::TaskId task = tasks::TaskId::sort;
  VectorTaskParams vec;
  MappingParams map;
  NetworkSpec network;
  std::uint64_t seed = 1;
  std::size_t batch = 16;
  std::size_t steps = 1000;
  double lr = 1e-3, rho = 0.9, eps = 1e-8;
  std::optional<double> lr_final;  // cosine decay target, reached at `steps`
  std::size_t decay_start = 0;     // first step of the decay
  double clip = 10.0;
  std::size_t truncation = 128;
  std::size_t log_every = 1;
  std::size_t eval_every = 0;
  std::size_t eval_count = 100;
  std::uint64_t eval_seed = 1000003;
  std::optional<double> stop_at;  // stop once the eval metric passes this value
  std::size_t checkpoint_every = 0;
  double max_seconds = 0;  // 0: no wall-clock limit
  std::string out_dir = "run";
};

inline json motion_json(tasks::Motion m) { return m == tasks::Motion::spiral ? "spiral" : "random"; }

inline json to_json_value(const TrainConfig& c) {
  json j;
  j["task"] = tasks::task_name(c.task);
  j["vector_task"] = {{"length", c.vec.length}, {"dims", c.vec.dims}, {"grid", {c.vec.rows, c.vec.cols}}};
  j["mapping"] = {{"world", c.map.world},     {"wall_density", c.map.wall_density},
                  {"motion", motion_json(c.map.motion)}, {"steps", c.map.steps},
                  {"observe", c.map.observe}, {"query", c.map.query},
                  {"margin", c.map.margin},   {"t_min", c.map.t_min},
                  {"resample_query", c.map.resample_query}};
  j["network"] = to_json_value(c.network);
  j["seed"] = c.seed;
  j["batch"] = c.batch;
  j["steps"] = c.steps;
  j["lr"] = c.lr;
  j["lr_final"] = c.lr_final ? json(*c.lr_final) : json(nullptr);
  j["decay_start"] = c.decay_start;
  j["rho"] = c.rho;
  j["eps"] = c.eps;
  j["clip"] = c.clip;
  j["truncation"] = c.truncation;
  j["log_every"] = c.log_every;
  j["eval_every"] = c.eval_every;
  j["eval_count"] = c.eval_count;
  j["eval_seed"] = c.eval_seed;
  j["stop_at"] = c.stop_at ? json(*c.stop_at) : json(nullptr);
  j["checkpoint_every"] = c.checkpoint_every;
  j["max_seconds"] = c.max_seconds;
  j["out_dir"] = c.out_dir;
  return j;
}

/// Task and task-parameter fields only; the network is left untouched.
inline void read_task_fields(const json& j, TrainConfig& c) {
  try {
    c.task = tasks::task_from_name(j.at("task").get<std::string>());
    if (j.contains("vector_task")) {
      const json& v = j["vector_task"];
      c.vec.length = v.value("length", c.vec.length);
      c.vec.dims = v.value("dims", c.vec.dims);
      if (v.contains("grid")) {
        c.vec.rows = v["grid"].at(0).get<std::size_t>();
        c.vec.cols = v["grid"].at(1).get<std::size_t>();
      }
    }
    if (j.contains("mapping")) {
      const json& m = j["mapping"];
      c.map.world = m.value("world", c.map.world);
      c.map.wall_density = m.value("wall_density", c.map.wall_density);
      const std::string motion = m.value("motion", std::string("spiral"));
      if (motion != "spiral" && motion != "random") throw SpecError("unknown motion: " + motion);
      c.map.motion = motion == "spiral" ? tasks::Motion::spiral : tasks::Motion::random;
      c.map.steps = m.value("steps", c.map.steps);
      c.map.observe = m.value("observe", c.map.observe);
      c.map.query = m.value("query", c.map.query);
      c.map.margin = m.value("margin", c.map.margin);
      c.map.t_min = m.value("t_min", c.map.t_min);
      c.map.resample_query = m.value("resample_query", c.map.resample_query);
    }
  } catch (const json::exception& e) {
    throw SpecError(std::string("malformed config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SpecError(e.what());
  }
  if (c.task != tasks::TaskId::mapping && c.vec.rows * c.vec.cols != c.vec.dims)
    throw SpecError("vector grid must hold exactly dims cells");
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  read_task_fields(j, c);
  try {
    c.network = network_spec_from_json(j.at("network"));
    c.seed = j.value("seed", c.seed);
    c.batch = j.value("batch", c.batch);
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    if (j.contains("lr_final") && !j["lr_final"].is_null()) c.lr_final = j["lr_final"].get<double>();
    c.decay_start = j.value("decay_start", c.decay_start);
    c.rho = j.value("rho", c.rho);
    c.eps = j.value("eps", c.eps);
    c.clip = j.value("clip", c.clip);
    c.truncation = j.value("truncation", c.truncation);
    c.log_every = j.value("log_every", c.log_every);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_count = j.value("eval_count", c.eval_count);
    c.eval_seed = j.value("eval_seed", c.eval_seed);
    if (j.contains("stop_at") && !j["stop_at"].is_null()) c.stop_at = j["stop_at"].get<double>();
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.max_seconds = j.value("max_seconds", c.max_seconds);
    c.out_dir = j.value("out_dir", c.out_dir);
  } catch (const json::exception& e) {
    throw SpecError(std::string("malformed config: ") + e.what());
  }
  if (c.batch == 0) throw SpecError("batch must be positive");
  if (c.truncation == 0) throw SpecError("truncation must be positive");
  const bool ed = c.network.kind == NetKind::encoder_decoder;
  if ((c.task == tasks::TaskId::sort) != ed) throw SpecError("sort uses an encoder-decoder; other tasks a writer-reader");
  return c;
}

/// Learning rate for the update that completes step `step` (1-based).
inline double scheduled_lr(const TrainConfig& c, std::size_t step) {
  if (!c.lr_final || step <= c.decay_start || c.steps <= c.decay_start) return c.lr;
  const double t = std::min(1.0, static_cast<double>(step - c.decay_start) / static_cast<double>(c.steps - c.decay_start));
  return *c.lr_final + 0.5 * (c.lr - *c.lr_final) * (1.0 + std::cos(3.14159265358979323846 * t));
}

/// Sets the field at a dotted path. The value is parsed as JSON when it can be,
/// and kept as a string otherwise.
inline void apply_override(json& j, const std::string& path, const std::string& value) {
  if (path.empty()) throw SpecError("empty override path");
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;
  json* node = &j;
  std::size_t begin = 0;
  while (true) {
    const std::size_t dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (key.empty()) throw SpecError("bad override path: " + path);
    const bool index = !key.empty() && key.find_first_not_of("0123456789") == std::string::npos && node->is_array();
    json& next = index ? node->at(std::stoul(key)) : (*node)[key];
    if (dot == std::string::npos) {
      next = parsed;
      return;
    }
    node = &next;
    begin = dot + 1;
  }
}

/// Seed override from MGMEM_SEED, when set.
inline std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("MGMEM_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw SpecError(std::string("MGMEM_SEED is not an integer: ") + s);
  return static_cast<std::uint64_t>(v);
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw SpecError(path + ": " + e.what());
  }
}

/// Config file, then dotted-path overrides, then MGMEM_SEED.
inline TrainConfig load_config(const std::string& path,
                               const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  json j = read_json_file(path);
  for (const auto& [k, v] : overrides) apply_override(j, k, v);
  TrainConfig c = train_config_from_json(j);
  if (auto s = env_seed()) c.seed = *s;
  return c;
}

}  // namespace mgmem

#endif  // MGMEM_TRAIN_CONFIG_HPP
