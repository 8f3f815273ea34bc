#ifndef MGMEM_TRAIN_VISUAL_HPP
#define MGMEM_TRAIN_VISUAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mgmem/train/runner.hpp"

namespace mgmem {

struct GrayImage {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

struct Grid {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;
};

/// One batch element of a hidden-state grid: a single channel, or the
/// per-cell maximum absolute value over channels.
template <typename T>
Grid grid_values(const Tensor<T>& h, std::size_t batch, std::optional<std::size_t> channel) {
  const Shape s = h.shape();
  if (s.h == 0 || s.w == 0 || s.c == 0) throw ShapeError("grid_values: empty grid");
  if (batch >= s.b) throw ShapeError("grid_values: batch index out of range");
  if (channel && *channel >= s.c) throw ShapeError("grid_values: channel out of range");
  Grid g{s.h, s.w, std::vector<double>(s.h * s.w)};
  for (std::size_t k = 0; k < s.h * s.w; ++k) {
    const T* px = h.ptr() + (batch * s.h * s.w + k) * s.c;
    if (channel) {
      g.values[k] = static_cast<double>(px[*channel]);
    } else {
      double m = 0;
      for (std::size_t c = 0; c < s.c; ++c) m = std::max(m, std::abs(static_cast<double>(px[c])));
      g.values[k] = m;
    }
  }
  return g;
}

/// Min-max normalization to 0..255; a constant grid maps to mid-gray.
inline GrayImage to_gray(const Grid& g) {
  if (g.values.empty()) throw ShapeError("to_gray: empty grid");
  const auto [lo, hi] = std::minmax_element(g.values.begin(), g.values.end());
  GrayImage img{g.rows, g.cols, std::vector<std::uint8_t>(g.values.size(), 128)};
  const double range = *hi - *lo;
  if (range > 0)
    for (std::size_t k = 0; k < g.values.size(); ++k)
      img.pixels[k] = static_cast<std::uint8_t>(std::lround((g.values[k] - *lo) / range * 255.0));
  return img;
}

inline void write_pgm(std::ostream& os, const GrayImage& img) {
  os << "P5\n" << img.cols << ' ' << img.rows << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline void write_grid_csv(std::ostream& os, const Grid& g) {
  os << std::setprecision(9);
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) os << (c ? "," : "") << g.values[r * g.cols + c];
    os << '\n';
  }
}

/// Writes `<path>` as PGM and `<path>.csv` with the raw values.
inline void export_grid(const std::string& path, const Grid& g) {
  std::ofstream pgm(path, std::ios::binary);
  if (!pgm) throw std::runtime_error("cannot write " + path);
  write_pgm(pgm, to_gray(g));
  std::ofstream csv(path + ".csv");
  if (!csv) throw std::runtime_error("cannot write " + path + ".csv");
  write_grid_csv(csv, g);
}

template <typename T>
const Tensor<T>& hidden_grid(const NetState<T>& st, std::size_t layer, std::size_t level) {
  if (layer >= st.size()) throw std::out_of_range("hidden_grid: layer " + std::to_string(layer) + " out of range");
  if (level >= st[layer].levels.size())
    throw std::out_of_range("hidden_grid: level " + std::to_string(level) + " out of range");
  return st[layer].levels[level].h;
}

template <typename T>
void export_memory_visual(const NetState<T>& st, std::size_t layer, std::size_t level,
                          std::optional<std::size_t> channel, const std::string& path) {
  export_grid(path, grid_values(hidden_grid(st, layer, level), 0, channel));
}

/// Writer state after a mapping episode together with what the agent saw.
template <typename T>
struct MemoryTrace {
  NetState<T> state;
  tasks::SeenMap seen;
};

template <typename T>
MemoryTrace<T> mapping_trace(Model<T>& model, const TrainConfig& c, const tasks::MazeEpisode& ep) {
  if (!model.wr) throw SpecError("memory trace needs a writer-reader network");
  MemoryTrace<T> out{{}, tasks::SeenMap(ep.world.n, ep.world.start)};
  std::vector<WRStep<T>> seq;
  for (const tasks::Pos p : ep.trajectory.positions) {
    seq.push_back({tasks::observe<T>(ep.world, p, ep.world.start, c.map.observe), {}, {}});
    out.seen.mark(ep.world, p, c.map.observe);
  }
  UnrollOptions opt;
  opt.truncation = c.truncation;
  opt.differentiate = false;
  opt.training = false;
  out.state = unroll(*model.wr, seq, model.wr->init_state(1), opt).state;
  return out;
}

/// Largest |Pearson r| between any channel of a hidden grid and a target
/// canvas, after cropping the grid at (row0, col0) to the canvas size.
template <typename T>
std::pair<double, std::size_t> best_channel_pearson(const Tensor<T>& h, const std::vector<double>& canvas,
                                                    std::size_t n, std::size_t row0, std::size_t col0) {
  const Shape s = h.shape();
  if (canvas.size() != n * n || row0 + n > s.h || col0 + n > s.w)
    throw ShapeError("best_channel_pearson: canvas does not fit the grid");
  double best = -1;
  std::size_t arg = 0;
  for (std::size_t ch = 0; ch < s.c; ++ch) {
    const Grid g = grid_values(h, 0, ch);
    std::vector<double> crop;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) crop.push_back(g.values[(row0 + r) * g.cols + col0 + c]);
    const double r = std::abs(tasks::pearson(crop, canvas));
    if (r > best) {
      best = r;
      arg = ch;
    }
  }
  return {best, arg};
}

}  // namespace mgmem

#endif  // MGMEM_TRAIN_VISUAL_HPP
