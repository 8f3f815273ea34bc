#ifndef MGMEM_ROUTING_HPP
#define MGMEM_ROUTING_HPP

#include <algorithm>
#include <cstddef>
#include <deque>
#include <fstream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

// Information-flow analysis of a multigrid stack. Levels are numbered from 1
// (coarsest); level n has side resolution 2^(n-1) * r1. Every layer carries
// every level. Grid coordinates are 1-indexed.

namespace mgmem::routing {

struct TopologySpec {
  std::size_t layers = 1;
  std::vector<std::size_t> resolutions;  // per level, coarsest first
  bool same_edges = true;
  bool up_edges = true;    // to the next finer level
  bool down_edges = true;  // to the next coarser level

  static TopologySpec multigrid(std::size_t layers, std::size_t levels, std::size_t coarsest) {
    TopologySpec s;
    s.layers = layers;
    for (std::size_t n = 0; n < levels; ++n) s.resolutions.push_back(coarsest << n);
    s.validate();
    return s;
  }

  /// A plain stack of 3x3 convolutions on one grid.
  static TopologySpec single_grid(std::size_t layers, std::size_t side) {
    TopologySpec s;
    s.layers = layers;
    s.resolutions = {side};
    s.up_edges = s.down_edges = false;
    return s;
  }

  std::size_t levels() const { return resolutions.size(); }

  void validate() const {
    if (layers < 1) throw std::invalid_argument("topology needs at least one layer");
    if (resolutions.empty() || resolutions.front() == 0) throw std::invalid_argument("topology needs levels");
    for (std::size_t n = 1; n < resolutions.size(); ++n)
      if (resolutions[n] != 2 * resolutions[n - 1])
        throw std::invalid_argument("level resolutions must double per level");
  }
};

struct TopologyNode {
  std::size_t layer = 1, level = 1, row = 1, col = 1;
  friend bool operator==(const TopologyNode&, const TopologyNode&) = default;
};

inline bool valid_node(const TopologyNode& v, const TopologySpec& s) {
  return v.layer >= 1 && v.layer <= s.layers && v.level >= 1 && v.level <= s.levels() && v.row >= 1 &&
         v.col >= 1 && v.row <= s.resolutions[v.level - 1] && v.col <= s.resolutions[v.level - 1];
}

namespace detail {

// 3x3 halo of [lo, hi] clipped to [1, side].
inline void halo(std::size_t lo, std::size_t hi, std::size_t side, std::size_t& a, std::size_t& b) {
  a = lo > 1 ? lo - 1 : 1;
  b = std::min(hi + 1, side);
}

inline void push_box(std::vector<TopologyNode>& out, std::size_t layer, std::size_t level, std::size_t r0,
                     std::size_t r1, std::size_t c0, std::size_t c1) {
  for (std::size_t i = r0; i <= r1; ++i)
    for (std::size_t j = c0; j <= c1; ++j) out.push_back({layer, level, i, j});
}

}  // namespace detail

/// Successors of a node in the next layer.
inline std::vector<TopologyNode> neighbors(const TopologyNode& v, const TopologySpec& s) {
  if (!valid_node(v, s)) throw std::invalid_argument("neighbors: invalid node");
  std::vector<TopologyNode> out;
  if (v.layer == s.layers) return out;
  const std::size_t next = v.layer + 1;
  std::size_t r0, r1, c0, c1;
  if (s.same_edges) {
    const std::size_t side = s.resolutions[v.level - 1];
    detail::halo(v.row, v.row, side, r0, r1);
    detail::halo(v.col, v.col, side, c0, c1);
    detail::push_box(out, next, v.level, r0, r1, c0, c1);
  }
  if (s.up_edges && v.level < s.levels()) {
    // Nearest-neighbour duplication to {2i-1, 2i}, then the conv halo.
    const std::size_t side = s.resolutions[v.level];
    detail::halo(2 * v.row - 1, 2 * v.row, side, r0, r1);
    detail::halo(2 * v.col - 1, 2 * v.col, side, c0, c1);
    detail::push_box(out, next, v.level + 1, r0, r1, c0, c1);
  }
  if (s.down_edges && v.level > 1) {
    // Pooling parent, then the conv halo.
    const std::size_t side = s.resolutions[v.level - 2];
    const std::size_t pi = (v.row + 1) / 2, pj = (v.col + 1) / 2;
    detail::halo(pi, pi, side, r0, r1);
    detail::halo(pj, pj, side, c0, c1);
    detail::push_box(out, next, v.level - 1, r0, r1, c0, c1);
  }
  return out;
}

/// Reachable locations per (layer, level) as row-major bitmaps.
class ReachSet {
public:
  explicit ReachSet(const TopologySpec& s) : spec_(s) {
    for (std::size_t m = 0; m < s.layers; ++m)
      for (std::size_t n = 0; n < s.levels(); ++n) maps_.emplace_back(s.resolutions[n] * s.resolutions[n], 0);
  }

  bool contains(const TopologyNode& v) const {
    return valid_node(v, spec_) && map(v.layer, v.level)[cell(v)] != 0;
  }
  bool insert(const TopologyNode& v) {
    auto& m = map(v.layer, v.level);
    const std::size_t k = cell(v);
    if (m[k]) return false;
    m[k] = 1;
    return true;
  }

  std::size_t count(std::size_t layer, std::size_t level) const {
    const auto& m = map(layer, level);
    return static_cast<std::size_t>(std::count(m.begin(), m.end(), char(1)));
  }

  /// Largest reached row and column (0 when empty).
  std::pair<std::size_t, std::size_t> max_extent(std::size_t layer, std::size_t level) const {
    const std::size_t side = spec_.resolutions[level - 1];
    const auto& m = map(layer, level);
    std::size_t mi = 0, mj = 0;
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j)
        if (m[i * side + j]) {
          mi = std::max(mi, i + 1);
          mj = std::max(mj, j + 1);
        }
    return {mi, mj};
  }

  /// True when every (i, j) in [1, extent]^2 is reached.
  bool contains_box(std::size_t layer, std::size_t level, std::size_t extent,
                    std::optional<TopologyNode>* first_missing = nullptr) const {
    const std::size_t side = spec_.resolutions[level - 1];
    if (extent > side) {
      if (first_missing) *first_missing = TopologyNode{layer, level, side + 1, 1};
      return false;
    }
    const auto& m = map(layer, level);
    for (std::size_t i = 1; i <= extent; ++i)
      for (std::size_t j = 1; j <= extent; ++j)
        if (!m[(i - 1) * side + (j - 1)]) {
          if (first_missing) *first_missing = TopologyNode{layer, level, i, j};
          return false;
        }
    return true;
  }

  const std::vector<char>& map(std::size_t layer, std::size_t level) const {
    return maps_.at((layer - 1) * spec_.levels() + (level - 1));
  }
  const TopologySpec& spec() const { return spec_; }

  friend bool operator==(const ReachSet& a, const ReachSet& b) { return a.maps_ == b.maps_; }

private:
  std::vector<char>& map(std::size_t layer, std::size_t level) {
    return maps_.at((layer - 1) * spec_.levels() + (level - 1));
  }
  std::size_t cell(const TopologyNode& v) const {
    return (v.row - 1) * spec_.resolutions[v.level - 1] + (v.col - 1);
  }

  TopologySpec spec_;
  std::vector<std::vector<char>> maps_;
};

enum class QueueDiscipline { fifo, lifo };

/// Exhaustive search of everything reachable from `source` across layers.
inline ReachSet reachable(const TopologySpec& s, const TopologyNode& source,
                          QueueDiscipline q = QueueDiscipline::fifo) {
  s.validate();
  if (!valid_node(source, s)) throw std::invalid_argument("reachable: invalid source node");
  ReachSet rs(s);
  std::deque<TopologyNode> work{source};
  rs.insert(source);
  while (!work.empty()) {
    TopologyNode v;
    if (q == QueueDiscipline::fifo) {
      v = work.front();
      work.pop_front();
    } else {
      v = work.back();
      work.pop_back();
    }
    for (const auto& u : neighbors(v, s))
      if (rs.insert(u)) work.push_back(u);
  }
  return rs;
}

/// Side of the box [1, b]^2 guaranteed reachable at [layer m, level n] from
/// (1,1) at [layer 1, level 1]: (m - n + 2) * 2^(n-1) - 1, for m >= n.
inline std::size_t prop1_bound(std::size_t m, std::size_t n) {
  if (n < 1 || m < n) throw std::invalid_argument("prop1_bound requires m >= n >= 1");
  return (m - n + 2) * (std::size_t{1} << (n - 1)) - 1;
}

/// Reach extent of a single-grid 3x3 conv stack from a corner after m layers.
inline std::size_t baseline_extent(std::size_t m) {
  if (m < 1) throw std::invalid_argument("baseline_extent requires m >= 1");
  return m;
}

struct Prop1Row {
  std::size_t m = 0, n = 0, bound = 0, actual_max_extent = 0;
  bool contains_bound = false;
  std::optional<TopologyNode> first_missing;
};

struct Prop1Report {
  std::vector<Prop1Row> rows;
  bool passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const Prop1Row& r) { return r.contains_bound; });
  }
};

/// Checks box containment for every n <= m with m <= m_max, n <= n_max.
inline Prop1Report verify_prop1(const TopologySpec& s, std::size_t m_max, std::size_t n_max) {
  if (n_max < 1 || m_max < n_max) throw std::invalid_argument("verify_prop1 requires m_max >= n_max >= 1");
  if (s.layers < m_max || s.levels() < n_max)
    throw std::invalid_argument("verify_prop1: topology has too few layers or levels");
  for (std::size_t n = 1; n <= n_max; ++n)
    if (s.resolutions[n - 1] < prop1_bound(m_max, n))
      throw std::invalid_argument("verify_prop1: level " + std::to_string(n) + " is smaller than its bound");
  const ReachSet rs = reachable(s, {1, 1, 1, 1});
  Prop1Report rep;
  for (std::size_t m = 1; m <= m_max; ++m)
    for (std::size_t n = 1; n <= std::min(m, n_max); ++n) {
      Prop1Row row;
      row.m = m;
      row.n = n;
      row.bound = prop1_bound(m, n);
      const auto [mi, mj] = rs.max_extent(m, n);
      row.actual_max_extent = std::max(mi, mj);
      row.contains_bound = rs.contains_box(m, n, row.bound, &row.first_missing);
      rep.rows.push_back(row);
    }
  return rep;
}

/// Smallest layer at which every location of `level` is reachable from (1,1)
/// at [layer 1, level 1], if any.
inline std::optional<std::size_t> coverage_depth(const TopologySpec& s, std::size_t level) {
  const ReachSet rs = reachable(s, {1, 1, 1, 1});
  const std::size_t side = s.resolutions.at(level - 1);
  for (std::size_t m = 1; m <= s.layers; ++m)
    if (rs.count(m, level) == side * side) return m;
  return std::nullopt;
}

inline void write_prop1_csv(std::ostream& os, const Prop1Report& rep) {
  os << "m,n,bound,actual_max_extent,contains_bound\n";
  for (const auto& r : rep.rows)
    os << r.m << ',' << r.n << ',' << r.bound << ',' << r.actual_max_extent << ','
       << (r.contains_bound ? "true" : "false") << '\n';
}

/// Binary PPM of the reach maps: one row of tiles per layer, one tile per
/// level, each scaled to the finest resolution. Reached cells are blue.
inline void write_reach_ppm(const std::string& path, const ReachSet& rs) {
  const TopologySpec& s = rs.spec();
  const std::size_t tile = s.resolutions.back();
  const std::size_t gap = 2;
  const std::size_t width = s.levels() * (tile + gap) - gap;
  const std::size_t height = s.layers * (tile + gap) - gap;
  std::vector<unsigned char> px(width * height * 3, 200);
  for (std::size_t m = 1; m <= s.layers; ++m)
    for (std::size_t n = 1; n <= s.levels(); ++n) {
      const std::size_t side = s.resolutions[n - 1];
      const std::size_t scale = tile / side;
      const auto& map = rs.map(m, n);
      for (std::size_t y = 0; y < tile; ++y)
        for (std::size_t x = 0; x < tile; ++x) {
          const bool hit = map[(y / scale) * side + (x / scale)] != 0;
          const std::size_t py = (m - 1) * (tile + gap) + y;
          const std::size_t pxl = (n - 1) * (tile + gap) + x;
          unsigned char* p = &px[(py * width + pxl) * 3];
          p[0] = hit ? 40 : 255;
          p[1] = hit ? 80 : 255;
          p[2] = hit ? 255 : 255;
        }
    }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "P6\n" << width << ' ' << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

}  // namespace mgmem::routing

#endif  // MGMEM_ROUTING_HPP
