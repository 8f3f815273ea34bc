#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "mgmem/tasks/algorithmic.hpp"
#include "mgmem/tasks/episode_io.hpp"
#include "mgmem/tasks/maze.hpp"
#include "mgmem/tasks/metrics.hpp"

using namespace mgmem;
using namespace mgmem::tasks;

namespace {

bool adjacent_or_equal(Pos a, Pos b) { return std::abs(a.r - b.r) + std::abs(a.c - b.c) <= 1; }

SeenMap seen_along(const MazeWorld& w, const Trajectory& tr, std::size_t upto, int m) {
  SeenMap s(w.n, w.start);
  for (std::size_t t = 0; t < upto; ++t) s.mark(w, tr.positions[t], m);
  return s;
}

// Compares every seen window of the canvas by direct cell reads.
std::vector<std::uint8_t> brute_force_mask(const SeenMap& s, const MazeWorld& w, int k, Pos center) {
  const int h = k / 2, N = s.size();
  auto cell = [&](Pos world) -> int {
    const int r = world.r - w.start.r + w.n - 1, c = world.c - w.start.c + w.n - 1;
    if (r < 0 || c < 0 || r >= N || c >= N) return -1;
    return s.cells[static_cast<std::size_t>(r * N + c)];
  };
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(N * N), 0);
  for (int r = 0; r < w.n; ++r)
    for (int c = 0; c < w.n; ++c) {
      bool ok = cell({r, c}) >= 0;
      for (int i = -h; i <= h && ok; ++i)
        for (int j = -h; j <= h && ok; ++j) {
          const int a = cell({r + i, c + j}), b = cell({center.r + i, center.c + j});
          ok = a >= 0 && a == b;
        }
      if (ok) mask[static_cast<std::size_t>((r - w.start.r + w.n - 1) * N + (c - w.start.c + w.n - 1))] = 1;
    }
  return mask;
}

}  // namespace

TEST(Maze, ZeroDensityIsOpen) {
  Rng rng(1);
  const auto w = gen_maze(9, 0.0, rng);
  EXPECT_FALSE(w.has_walls());
  EXPECT_EQ(w.start, (Pos{4, 4}));
  EXPECT_EQ(w, open_world(9));
}

TEST(Maze, AlwaysConnectedAndDeterministic) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng a(seed), b(seed);
    const int n = 5 + 2 * static_cast<int>(seed % 6);
    const auto w = gen_maze(n, 0.35, a);
    ASSERT_TRUE(is_connected(w)) << seed;
    ASSERT_TRUE(w.free(w.start));
    ASSERT_EQ(w, gen_maze(n, 0.35, b));
  }
  Rng rng(7);
  std::size_t walls = 0;
  for (int k = 0; k < 50; ++k) {
    const auto w = gen_maze(15, 0.2, rng);
    for (auto c : w.cells) walls += c;
  }
  EXPECT_GT(walls, 0u);
}

TEST(Maze, RejectsBadArguments) {
  Rng rng(2);
  EXPECT_THROW(gen_maze(4, 0.1, rng), std::invalid_argument);
  EXPECT_THROW(gen_maze(3, 0.1, rng), std::invalid_argument);
  EXPECT_THROW(gen_maze(9, 0.5, rng), std::invalid_argument);
}

TEST(Spiral, CoversOpenWorldExactlyOnce) {
  for (int n : {5, 9, 13}) {
    const auto w = open_world(n);
    const auto tr = spiral_trajectory(w, 10000);
    ASSERT_EQ(tr.positions.size(), static_cast<std::size_t>(n * n));
    std::set<std::pair<int, int>> seen;
    for (std::size_t t = 0; t < tr.positions.size(); ++t) {
      const Pos p = tr.positions[t];
      EXPECT_TRUE(w.free(p));
      seen.insert({p.r, p.c});
      if (t > 0) EXPECT_EQ(std::abs(p.r - tr.positions[t - 1].r) + std::abs(p.c - tr.positions[t - 1].c), 1);
    }
    EXPECT_EQ(seen.size(), static_cast<std::size_t>(n * n));
  }
}

TEST(Spiral, MarginAndTruncation) {
  const auto w = open_world(15);
  const auto tr = spiral_trajectory(w, 100000, 1);
  EXPECT_EQ(tr.positions.size(), 169u);
  for (const Pos p : tr.positions) {
    EXPECT_GE(p.r, 1);
    EXPECT_LE(p.r, 13);
  }
  const auto one = spiral_trajectory(w, 1);
  ASSERT_EQ(one.positions.size(), 1u);
  EXPECT_EQ(one.positions[0], w.start);
  const auto first = spiral_trajectory(w, 4);
  EXPECT_EQ(first.positions[1], (Pos{7, 8}));  // right
  EXPECT_EQ(first.positions[2], (Pos{8, 8}));  // down
  EXPECT_EQ(first.positions[3], (Pos{8, 7}));  // left
}

TEST(Spiral, RejectsWalledWorld) {
  auto w = open_world(9);
  w.cells[0] = 1;
  EXPECT_THROW(spiral_trajectory(w, 10), std::invalid_argument);
  EXPECT_THROW(spiral_trajectory(open_world(9), 0), std::invalid_argument);
}

TEST(RandomWalk, LegalStepsInMaze) {
  Rng rng(3);
  const auto w = gen_maze(11, 0.3, rng);
  const auto tr = random_walk(w, 2000, rng);
  ASSERT_EQ(tr.positions.size(), 2000u);
  EXPECT_EQ(tr.positions[0], w.start);
  for (std::size_t t = 0; t < tr.positions.size(); ++t) {
    ASSERT_TRUE(w.free(tr.positions[t]));
    if (t > 0) ASSERT_TRUE(adjacent_or_equal(tr.positions[t - 1], tr.positions[t]));
  }
}

TEST(RandomWalk, DirectionsUniformInOpenInterior) {
  // Interior cells have four legal moves; each should appear with p = 1/4.
  Rng rng(4);
  const auto w = open_world(101);
  const auto tr = random_walk(w, 100001, rng);
  std::size_t counts[4] = {0, 0, 0, 0}, total = 0;
  for (std::size_t t = 1; t < tr.positions.size(); ++t) {
    const Pos a = tr.positions[t - 1], b = tr.positions[t];
    if (a.r == 0 || a.c == 0 || a.r == w.n - 1 || a.c == w.n - 1) continue;
    for (std::size_t d = 0; d < 4; ++d)
      if (b.r - a.r == kMoves[d].r && b.c - a.c == kMoves[d].c) ++counts[d];
    ++total;
  }
  ASSERT_GT(total, 90000u);
  const double p = 0.25, sigma = std::sqrt(static_cast<double>(total) * p * (1 - p));
  for (std::size_t d = 0; d < 4; ++d)
    EXPECT_LT(std::abs(static_cast<double>(counts[d]) - p * static_cast<double>(total)), 5 * sigma) << d;
}

TEST(Observe, StartHasZeroDisplacement) {
  const auto w = open_world(9);
  const auto o = observe<double>(w, w.start, w.start, 3);
  EXPECT_EQ(o.shape(), (Shape{1, 3, 3, 4}));
  for (std::size_t k = 0; k < 9; ++k) {
    EXPECT_EQ(o[4 * k + 0], 0.0);
    EXPECT_EQ(o[4 * k + 1], 1.0);
    EXPECT_EQ(o[4 * k + 2], 0.0);
    EXPECT_EQ(o[4 * k + 3], 0.0);
  }
  const auto far = observe<double>(w, {0, 8}, w.start, 3);
  EXPECT_DOUBLE_EQ(far[2], -0.5);
  EXPECT_DOUBLE_EQ(far[3], 0.5);
}

TEST(Observe, OutsideReadsWall) {
  const auto w = open_world(9);
  const auto o = observe<double>(w, {0, 0}, w.start, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const bool outside = i == 0 || j == 0;
      EXPECT_EQ(o.at(0, i, j, 0), outside ? 1.0 : 0.0);
      EXPECT_EQ(o.at(0, i, j, 1), outside ? 0.0 : 1.0);
    }
  auto walled = open_world(9);
  walled.cells[0] = 1;
  EXPECT_THROW(observe<double>(walled, {0, 0}, walled.start, 3), std::invalid_argument);
  EXPECT_THROW(observe<double>(w, {1, 1}, w.start, 2), std::invalid_argument);
}

TEST(Observe, MirroredWorldGivesMirroredPatch) {
  Rng rng(5);
  auto w = gen_maze(11, 0.3, rng);
  // make it left-right symmetric
  for (int r = 0; r < w.n; ++r)
    for (int c = w.n / 2 + 1; c < w.n; ++c)
      w.cells[static_cast<std::size_t>(r * w.n + c)] = w.cells[static_cast<std::size_t>(r * w.n + (w.n - 1 - c))];
  for (int r = 0; r < w.n; ++r)
    for (int c = 0; c < w.n; ++c) {
      if (w.wall({r, c})) continue;
      const auto a = observe<double>(w, {r, c}, w.start, 5);
      const auto b = observe<double>(w, {r, w.n - 1 - c}, w.start, 5);
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
          ASSERT_EQ(a.at(0, i, j, 0), b.at(0, i, 4 - j, 0));
          ASSERT_EQ(a.at(0, i, j, 3), -b.at(0, i, 4 - j, 3));
        }
    }
}

TEST(SeenMap, CanvasIsRecentredAndInjective) {
  const auto w = open_world(9);
  SeenMap s(9, w.start);
  EXPECT_EQ(s.size(), 17);
  EXPECT_EQ(s.to_canvas(w.start), (Pos{8, 8}));
  std::set<std::pair<int, int>> used;
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) {
      const Pos q = s.to_canvas({r, c});
      EXPECT_TRUE(s.on_canvas(q));
      EXPECT_TRUE(used.insert({q.r, q.c}).second);
      EXPECT_EQ(s.to_world(q), (Pos{r, c}));
    }
  s.mark(w, {0, 0}, 3);
  EXPECT_EQ(s.at_world({0, 0}), 0);
  EXPECT_EQ(s.at_world({-1, -1}), 1);
  EXPECT_EQ(s.at_world({2, 2}), -1);
  const auto img = s.explored_canvas();
  EXPECT_EQ(img[static_cast<std::size_t>(s.to_canvas({0, 0}).r * 17 + s.to_canvas({0, 0}).c)], 1.0);
  EXPECT_EQ(img[static_cast<std::size_t>(s.to_canvas({-1, -1}).r * 17 + s.to_canvas({-1, -1}).c)], -1.0);
}

TEST(Query, UniformWorldMarksEveryInteriorSeenCell) {
  const auto w = open_world(9);
  const auto tr = spiral_trajectory(w, 81);
  const auto s = seen_along(w, tr, 81, 3);
  LocalizationQuery q{{4, 4}, 3, std::vector<std::uint8_t>(9, 0), {}};
  const auto mask = match_mask(s, w, 3, q.patch);
  std::size_t ones = 0;
  for (auto v : mask) ones += v;
  EXPECT_EQ(ones, 49u);  // the 7x7 interior
}

TEST(Query, UniquePatchMarksOne) {
  const auto w = open_world(9);
  const auto tr = spiral_trajectory(w, 81);
  const auto s = seen_along(w, tr, 81, 3);
  // the top-left corner window has walls on two sides; only one cell matches
  std::vector<std::uint8_t> corner = {1, 1, 1, 1, 0, 0, 1, 0, 0};
  const auto mask = match_mask(s, w, 3, corner);
  std::size_t ones = 0;
  for (auto v : mask) ones += v;
  EXPECT_EQ(ones, 1u);
  EXPECT_EQ(mask[static_cast<std::size_t>(s.to_canvas({0, 0}).r * 17 + s.to_canvas({0, 0}).c)], 1);
}

TEST(Query, MatchesBruteForceOracle) {
  Rng rng(6);
  for (int ep = 0; ep < 100; ++ep) {
    const auto w = gen_maze(9, 0.25, rng);
    const auto tr = random_walk(w, 10 + uniform_index(rng, 60), rng);
    const auto s = seen_along(w, tr, tr.positions.size(), 3);
    for (int rep = 0; rep < 3; ++rep) {
      const auto q = sample_query(s, w, 3, rng);
      ASSERT_EQ(q.mask, brute_force_mask(s, w, 3, q.center)) << ep;
      EXPECT_EQ(q.mask[static_cast<std::size_t>(s.to_canvas(q.center).r * s.size() + s.to_canvas(q.center).c)], 1);
      for (std::size_t k = 0; k < q.mask.size(); ++k)
        if (q.mask[k]) ASSERT_GE(s.cells[k], 0);
    }
  }
}

TEST(Query, RequiresSeenWindow) {
  Rng rng(7);
  const auto w = open_world(9);
  SeenMap s(9, w.start);
  EXPECT_THROW(sample_query(s, w, 3, rng), std::runtime_error);
  s.mark(w, w.start, 3);
  const auto q = sample_query(s, w, 3, rng);
  EXPECT_EQ(q.center, w.start);
  const auto t = query_tensor<double>(q);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 3, 2}));
  EXPECT_EQ(t[1], 1.0);
}

TEST(Sort, TwoItemExample) {
  SortInstance s;
  s.vectors = {{1, 0}, {0, 1}};
  s.priorities = {0.9f, 0.1f};
  EXPECT_EQ(sorted_by_priority(s.vectors, s.priorities), (std::vector<BitVector>{{0, 1}, {1, 0}}));
}

TEST(Sort, TargetsAscendInPriority) {
  Rng rng(8);
  for (int k = 0; k < 10000; ++k) {
    const auto s = gen_sort(8, 6, rng);
    std::vector<std::size_t> used;
    float last = -1;
    for (const auto& v : s.target) {
      // recover the priority of each target row
      std::size_t idx = s.vectors.size();
      for (std::size_t i = 0; i < s.vectors.size(); ++i)
        if (s.vectors[i] == v && std::find(used.begin(), used.end(), i) == used.end() &&
            (idx == s.vectors.size() || s.priorities[i] < s.priorities[idx]))
          idx = i;
      ASSERT_LT(idx, s.vectors.size());
      used.push_back(idx);
      ASSERT_GE(s.priorities[idx], last);
      last = s.priorities[idx];
    }
    std::set<float> distinct(s.priorities.begin(), s.priorities.end());
    ASSERT_EQ(distinct.size(), 8u);
  }
}

TEST(Recall, TargetFollowsQuery) {
  Rng rng(9);
  for (int k = 0; k < 1000; ++k) {
    const auto r = gen_recall(6, 6, rng);
    ASSERT_LT(r.query, 5u);
    EXPECT_EQ(r.target, r.vectors[r.query + 1]);
    std::set<BitVector> distinct(r.vectors.begin(), r.vectors.end());
    ASSERT_EQ(distinct.size(), 6u);
  }
  EXPECT_THROW(gen_recall(8, 3, rng), std::invalid_argument);
  RecallInstance r;
  r.vectors = {{0}, {1}, {0}, {1}, {1}};
  r.query = 2;
  r.target = r.vectors[3];
  const auto t = recall_input<double>(r, 5, 1, 1);
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 1.0);
}

TEST(Encoding, GridsAndBatches) {
  const BitVector v = {1, 0, 1, 1, 0, 0};
  const auto g = bits_grid<double>(v, 2, 3);
  EXPECT_EQ(g.shape(), (Shape{1, 2, 3, 1}));
  EXPECT_EQ(g.at(0, 1, 0, 0), 1.0);
  EXPECT_THROW(bits_grid<double>(v, 3, 3), ShapeError);
  const auto b = stack_batch<double>({g, g, g});
  EXPECT_EQ(b.shape(), (Shape{3, 2, 3, 1}));
  SortInstance s{{v, v}, {0.25f, 0.75f}, {}};
  const auto in = sort_input<double>(s, 1, 2, 3);
  EXPECT_EQ(in.at(0, 0, 0, 1), 0.75);
}

TEST(Metrics, PrfCases) {
  const std::vector<std::uint8_t> mask = {1, 1, 0, 0, 1, 1};
  const std::vector<double> exact = {1, 1, 0, 0, 1, 1};
  auto m = metrics_prf(exact, mask);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.f, 1.0);
  m = metrics_prf(std::vector<double>(6, 0.0), mask);
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f, 0.0);
  m = metrics_prf(std::vector<double>{0.9, 0.6, 0.1, 0.2, 0.3, 0.4}, mask);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 0.5);
  EXPECT_NEAR(m.f, 2.0 / 3.0, 1e-15);
  m = metrics_prf(std::vector<double>(3, 0.1), std::vector<std::uint8_t>(3, 0));
  EXPECT_EQ(m.f, 1.0);
  EXPECT_THROW(metrics_prf(exact, mask, 1.0), std::invalid_argument);
}

TEST(Metrics, BitError) {
  const std::vector<std::uint8_t> t = {1, 0, 1, 1};
  EXPECT_EQ(metrics_bit_error(std::vector<double>{0.9, 0.1, 0.7, 0.6}, t), 0.0);
  EXPECT_EQ(metrics_bit_error(std::vector<double>{0.1, 0.9, 0.3, 0.4}, t), 1.0);
  std::vector<std::uint8_t> big(90, 1);
  std::vector<double> pred(90, 0.8);
  pred[17] = 0.2;
  EXPECT_NEAR(metrics_bit_error(pred, big), 1.0 / 90.0, 1e-15);
}

TEST(Metrics, PearsonAndMeanStd) {
  EXPECT_NEAR(pearson({1, 2, 3}, {2, 4, 6}), 1.0, 1e-15);
  EXPECT_NEAR(pearson({1, 2, 3}, {3, 2, 1}), -1.0, 1e-15);
  EXPECT_EQ(pearson({1, 1, 1}, {1, 2, 3}), 0.0);
  const auto ms = mean_std({1, 3});
  EXPECT_EQ(ms.mean, 2.0);
  EXPECT_EQ(ms.std, 1.0);
}

TEST(EpisodeIO, RoundTripAllTasks) {
  Rng rng(10);
  EpisodeSet sort{TaskId::sort, {}, {}, {}};
  for (int k = 0; k < 5; ++k) sort.sort.push_back(gen_sort(8, 6, rng));
  EpisodeSet recall{TaskId::recall, {}, {}, {}};
  for (int k = 0; k < 5; ++k) recall.recall.push_back(gen_recall(6, 6, rng));
  EpisodeSet maze{TaskId::mapping, {}, {}, {}};
  for (int k = 0; k < 3; ++k) {
    const auto w = gen_maze(9, 0.2, rng);
    maze.maze.push_back({w, random_walk(w, 30, rng)});
  }
  for (const auto* s : {&sort, &recall, &maze}) {
    std::stringstream buf;
    write_episodes(buf, *s);
    const std::string bytes = buf.str();
    EXPECT_EQ(bytes.substr(0, 4), "MGT1");
    const auto back = read_episodes(buf);
    ASSERT_EQ(back.task, s->task);
    ASSERT_EQ(back.size(), s->size());
    for (std::size_t k = 0; k < s->sort.size(); ++k) {
      EXPECT_EQ(back.sort[k].vectors, s->sort[k].vectors);
      EXPECT_EQ(back.sort[k].priorities, s->sort[k].priorities);
      EXPECT_EQ(back.sort[k].target, s->sort[k].target);
    }
    for (std::size_t k = 0; k < s->recall.size(); ++k) {
      EXPECT_EQ(back.recall[k].vectors, s->recall[k].vectors);
      EXPECT_EQ(back.recall[k].query, s->recall[k].query);
    }
    for (std::size_t k = 0; k < s->maze.size(); ++k) EXPECT_EQ(back.maze[k], s->maze[k]);
    std::stringstream cut(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_episodes(cut), FormatError);
  }
  std::stringstream bad("MGT1\x02\0\0\0");
  EXPECT_THROW(read_episodes(bad), FormatError);
  std::stringstream junk("XXXX");
  EXPECT_THROW(read_episodes(junk), FormatError);
}

TEST(EpisodeIO, TextDump) {
  EpisodeSet s{TaskId::recall, {}, {}, {}};
  s.recall.push_back({{{0, 1}, {1, 1}, {1, 0}}, 1, {1, 0}});
  std::ostringstream os;
  dump_episodes(os, s);
  EXPECT_EQ(os.str(), "task recall count 1\nepisode 0\n01\n11\n10\nquery 1 -> 10\n");
}
