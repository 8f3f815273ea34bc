#ifndef MGMEM_TASKS_MAZE_HPP
#define MGMEM_TASKS_MAZE_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgmem/params.hpp"
#include "mgmem/tensor.hpp"

namespace mgmem::tasks {

struct Pos {
  int r = 0, c = 0;
  friend bool operator==(const Pos&, const Pos&) = default;
};

/// n x n occupancy grid, row-major, 1 = wall. Cells outside the grid read as wall.
struct MazeWorld {
  int n = 0;
  std::vector<std::uint8_t> cells;
  Pos start;

  bool inside(Pos p) const { return p.r >= 0 && p.c >= 0 && p.r < n && p.c < n; }
  bool wall(Pos p) const { return !inside(p) || cells[static_cast<std::size_t>(p.r * n + p.c)] != 0; }
  bool free(Pos p) const { return !wall(p); }
  bool has_walls() const { return std::any_of(cells.begin(), cells.end(), [](std::uint8_t v) { return v != 0; }); }
  friend bool operator==(const MazeWorld&, const MazeWorld&) = default;
};

inline constexpr Pos kMoves[4] = {{0, 1}, {1, 0}, {0, -1}, {-1, 0}};  // right, down, left, up

/// Component label per cell (-1 for walls), 4-connectivity.
inline std::vector<int> free_components(const MazeWorld& w, int* count = nullptr) {
  std::vector<int> label(w.cells.size(), -1);
  int next = 0;
  std::vector<Pos> stack;
  for (int r = 0; r < w.n; ++r)
    for (int c = 0; c < w.n; ++c) {
      const std::size_t k = static_cast<std::size_t>(r * w.n + c);
      if (w.cells[k] || label[k] >= 0) continue;
      label[k] = next;
      stack.push_back({r, c});
      while (!stack.empty()) {
        const Pos p = stack.back();
        stack.pop_back();
        for (const Pos d : kMoves) {
          const Pos q{p.r + d.r, p.c + d.c};
          if (w.wall(q)) continue;
          const std::size_t kq = static_cast<std::size_t>(q.r * w.n + q.c);
          if (label[kq] < 0) {
            label[kq] = next;
            stack.push_back(q);
          }
        }
      }
      ++next;
    }
  if (count) *count = next;
  return label;
}

inline bool is_connected(const MazeWorld& w) {
  int count = 0;
  free_components(w, &count);
  return count <= 1;
}

/// Random walls with density rho, then walls removed in a random order until
/// the free space is one 4-connected region. Start is the centre cell.
inline MazeWorld gen_maze(int n, double rho, Rng& rng) {
  if (n < 5 || n % 2 == 0) throw std::invalid_argument("gen_maze: n must be odd and >= 5");
  if (rho < 0.0 || rho > 0.35) throw std::invalid_argument("gen_maze: wall density must lie in [0, 0.35]");
  MazeWorld w;
  w.n = n;
  w.start = {n / 2, n / 2};
  w.cells.assign(static_cast<std::size_t>(n * n), 0);
  for (auto& v : w.cells) v = uniform01(rng) < rho ? 1 : 0;
  const std::size_t sk = static_cast<std::size_t>(w.start.r * n + w.start.c);
  w.cells[sk] = 0;

  std::vector<std::size_t> walls;
  for (std::size_t k = 0; k < w.cells.size(); ++k)
    if (w.cells[k]) walls.push_back(k);
  for (std::size_t i = walls.size(); i > 1; --i) std::swap(walls[i - 1], walls[uniform_index(rng, i)]);

  int count = 0;
  auto label = free_components(w, &count);
  while (count > 1) {
    // Prefer a wall joining the start region to another region; otherwise grow the start region.
    const int home = label[sk];
    std::size_t pick = walls.size(), grow = walls.size();
    for (std::size_t i = 0; i < walls.size() && pick == walls.size(); ++i) {
      const Pos p{static_cast<int>(walls[i]) / n, static_cast<int>(walls[i]) % n};
      bool touches_home = false, touches_other = false;
      for (const Pos d : kMoves) {
        const Pos q{p.r + d.r, p.c + d.c};
        if (w.wall(q)) continue;
        const int l = label[static_cast<std::size_t>(q.r * n + q.c)];
        (l == home ? touches_home : touches_other) = true;
      }
      if (touches_home && touches_other) pick = i;
      if (touches_home && grow == walls.size()) grow = i;
    }
    if (pick == walls.size()) pick = grow;
    w.cells[walls[pick]] = 0;
    walls.erase(walls.begin() + static_cast<std::ptrdiff_t>(pick));
    label = free_components(w, &count);
  }
  return w;
}

inline MazeWorld open_world(int n) {
  if (n < 1 || n % 2 == 0) throw std::invalid_argument("open_world: n must be odd");
  return MazeWorld{n, std::vector<std::uint8_t>(static_cast<std::size_t>(n * n), 0), {n / 2, n / 2}};
}

enum class Motion : std::uint8_t { spiral, random };

struct Trajectory {
  std::vector<Pos> positions;
  Motion kind = Motion::spiral;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Outward square spiral from the start (right, down, left, up with arm lengths
/// 1,1,2,2,...) over the cells at least `margin` from the border, stopping after
/// T positions or full coverage of that region.
inline Trajectory spiral_trajectory(const MazeWorld& w, std::size_t T, int margin = 0) {
  if (T < 1) throw std::invalid_argument("spiral_trajectory: T must be >= 1");
  if (w.has_walls()) throw std::invalid_argument("spiral_trajectory: world has walls");
  const int lo = margin, hi = w.n - 1 - margin;
  auto in_region = [&](Pos p) { return p.r >= lo && p.c >= lo && p.r <= hi && p.c <= hi; };
  if (!in_region(w.start)) throw std::invalid_argument("spiral_trajectory: start outside the spiral region");
  const std::size_t side = static_cast<std::size_t>(hi - lo + 1);
  const std::size_t total = side * side;
  Trajectory tr{{w.start}, Motion::spiral};
  Pos p = w.start;
  std::size_t covered = 1;
  for (int arm = 1; tr.positions.size() < T && covered < total; ++arm)
    for (int rep = 0; rep < 2 && tr.positions.size() < T && covered < total; ++rep) {
      const Pos d = kMoves[static_cast<std::size_t>((2 * (arm - 1) + rep) % 4)];
      for (int s = 0; s < arm && tr.positions.size() < T && covered < total; ++s) {
        p = {p.r + d.r, p.c + d.c};
        if (!in_region(p)) return tr;  // off-centre start: the spiral leaves the region
        tr.positions.push_back(p);
        ++covered;
      }
    }
  return tr;
}

/// Uniform random legal moves; blocked draws are resampled.
inline Trajectory random_walk(const MazeWorld& w, std::size_t T, Rng& rng) {
  if (T < 1) throw std::invalid_argument("random_walk: T must be >= 1");
  if (w.wall(w.start)) throw std::invalid_argument("random_walk: start is a wall");
  bool any = false;
  for (const Pos d : kMoves) any = any || w.free({w.start.r + d.r, w.start.c + d.c});
  Trajectory tr{{w.start}, Motion::random};
  Pos p = w.start;
  while (tr.positions.size() < T) {
    if (!any) {
      tr.positions.push_back(p);
      continue;
    }
    Pos q;
    do {
      const Pos d = kMoves[uniform_index(rng, 4)];
      q = {p.r + d.r, p.c + d.c};
    } while (w.wall(q));
    p = q;
    tr.positions.push_back(p);
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Observation and the re-centred map

/// m x m patch around `pos` as one-hot [wall, free] plus two constant channels
/// holding the displacement from `start` divided by (n-1).
template <typename T>
Tensor<T> observe(const MazeWorld& w, Pos pos, Pos start, int m) {
  if (m < 1 || m % 2 == 0) throw std::invalid_argument("observe: m must be odd");
  if (w.wall(pos)) throw std::invalid_argument("observe: agent position is a wall");
  const std::size_t M = static_cast<std::size_t>(m);
  Tensor<T> out({1, M, M, 4});
  const T dr = w.n > 1 ? static_cast<T>(pos.r - start.r) / static_cast<T>(w.n - 1) : T(0);
  const T dc = w.n > 1 ? static_cast<T>(pos.c - start.c) / static_cast<T>(w.n - 1) : T(0);
  const int h = m / 2;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const bool wall = w.wall({pos.r + i - h, pos.c + j - h});
      const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(j);
      out.at(0, a, b, 0) = wall ? T(1) : T(0);
      out.at(0, a, b, 1) = wall ? T(0) : T(1);
      out.at(0, a, b, 2) = dr;
      out.at(0, a, b, 3) = dc;
    }
  return out;
}

/// What the agent has seen, on the (2n-1)^2 canvas centred at its start:
/// -1 unseen, 0 free, 1 wall. Canvas index of world cell p is p - start + (n-1).
struct SeenMap {
  int n = 0;
  Pos start;
  std::vector<std::int8_t> cells;

  SeenMap() = default;
  SeenMap(int world_n, Pos s) : n(world_n), start(s), cells(static_cast<std::size_t>(size() * size()), -1) {}

  int size() const { return 2 * n - 1; }
  Pos to_canvas(Pos p) const { return {p.r - start.r + n - 1, p.c - start.c + n - 1}; }
  Pos to_world(Pos q) const { return {q.r + start.r - (n - 1), q.c + start.c - (n - 1)}; }
  bool on_canvas(Pos q) const { return q.r >= 0 && q.c >= 0 && q.r < size() && q.c < size(); }
  std::int8_t at_canvas(Pos q) const {
    return on_canvas(q) ? cells[static_cast<std::size_t>(q.r * size() + q.c)] : std::int8_t{-1};
  }
  std::int8_t at_world(Pos p) const { return at_canvas(to_canvas(p)); }

  void mark(const MazeWorld& w, Pos pos, int m) {
    const int h = m / 2;
    for (int i = -h; i <= h; ++i)
      for (int j = -h; j <= h; ++j) {
        const Pos p{pos.r + i, pos.c + j};
        const Pos q = to_canvas(p);
        if (on_canvas(q)) cells[static_cast<std::size_t>(q.r * size() + q.c)] = w.wall(p) ? 1 : 0;
      }
  }

  /// Explored-map image: seen free 1, seen wall -1, unseen 0.
  std::vector<double> explored_canvas() const {
    std::vector<double> out(cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k) out[k] = cells[k] < 0 ? 0.0 : (cells[k] == 0 ? 1.0 : -1.0);
    return out;
  }
};

struct LocalizationQuery {
  Pos center;                          // world position the patch was taken from
  int k = 0;
  std::vector<std::uint8_t> patch;     // k x k, 1 = wall
  std::vector<std::uint8_t> mask;      // canvas, 1 = matching location
};

namespace detail {

inline bool window_seen(const SeenMap& s, Pos p, int k) {
  const int h = k / 2;
  for (int i = -h; i <= h; ++i)
    for (int j = -h; j <= h; ++j)
      if (s.at_world({p.r + i, p.c + j}) < 0) return false;
  return true;
}

inline bool window_equals(const SeenMap& s, Pos p, int k, const std::vector<std::uint8_t>& patch) {
  const int h = k / 2;
  for (int i = -h; i <= h; ++i)
    for (int j = -h; j <= h; ++j)
      if (static_cast<std::uint8_t>(s.at_world({p.r + i, p.c + j})) !=
          patch[static_cast<std::size_t>((i + h) * k + (j + h))])
        return false;
  return true;
}

}  // namespace detail

/// World cells whose k x k neighbourhood is fully seen.
inline std::vector<Pos> query_centers(const SeenMap& s, const MazeWorld& w, int k) {
  std::vector<Pos> out;
  for (int r = 0; r < w.n; ++r)
    for (int c = 0; c < w.n; ++c)
      if (s.at_world({r, c}) >= 0 && detail::window_seen(s, {r, c}, k)) out.push_back({r, c});
  return out;
}

/// Mask of every eligible centre whose seen window equals `patch`.
inline std::vector<std::uint8_t> match_mask(const SeenMap& s, const MazeWorld& w, int k,
                                            const std::vector<std::uint8_t>& patch) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(s.size() * s.size()), 0);
  for (const Pos p : query_centers(s, w, k))
    if (detail::window_equals(s, p, k, patch)) {
      const Pos q = s.to_canvas(p);
      mask[static_cast<std::size_t>(q.r * s.size() + q.c)] = 1;
    }
  return mask;
}

inline LocalizationQuery sample_query(const SeenMap& s, const MazeWorld& w, int k, Rng& rng) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("sample_query: k must be odd");
  const auto centers = query_centers(s, w, k);
  if (centers.empty()) throw std::runtime_error("sample_query: no fully seen k x k window yet");
  LocalizationQuery q;
  q.k = k;
  q.center = centers[uniform_index(rng, centers.size())];
  const int h = k / 2;
  for (int i = -h; i <= h; ++i)
    for (int j = -h; j <= h; ++j)
      q.patch.push_back(static_cast<std::uint8_t>(s.at_world({q.center.r + i, q.center.c + j})));
  q.mask = match_mask(s, w, k, q.patch);
  return q;
}

/// Query patch as a k x k x 2 one-hot [wall, free] tensor.
template <typename T>
Tensor<T> query_tensor(const LocalizationQuery& q) {
  const std::size_t K = static_cast<std::size_t>(q.k);
  Tensor<T> out({1, K, K, 2});
  for (std::size_t a = 0; a < K * K; ++a) {
    out[2 * a] = q.patch[a] ? T(1) : T(0);
    out[2 * a + 1] = q.patch[a] ? T(0) : T(1);
  }
  return out;
}

}  // namespace mgmem::tasks

#endif  // MGMEM_TASKS_MAZE_HPP
