#ifndef MGMEM_TASKS_EPISODE_IO_HPP
#define MGMEM_TASKS_EPISODE_IO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgmem/tasks/algorithmic.hpp"
#include "mgmem/tasks/maze.hpp"

// Episode files, little-endian:
//   "MGT1" | u32 version | u32 task id | u32 ndims | u32 dims[ndims] | u32 count | records
// Records per task:
//   mapping (dims n, T, motion): n*n u8 cells, u8 start row, u8 start col, T x (u8 row, u8 col)
//   sort    (dims L, d):          L*d u8 bits, L f32 priorities
//   recall  (dims L, d):          L*d u8 bits, u32 query index

namespace mgmem::tasks {

enum class TaskId : std::uint32_t { mapping = 0, sort = 1, recall = 2 };

inline const char* task_name(TaskId t) {
  switch (t) {
    case TaskId::mapping: return "mapping";
    case TaskId::sort: return "sort";
    case TaskId::recall: return "recall";
  }
  return "?";
}

inline TaskId task_from_name(const std::string& s) {
  if (s == "mapping") return TaskId::mapping;
  if (s == "sort") return TaskId::sort;
  if (s == "recall") return TaskId::recall;
  throw std::invalid_argument("unknown task: " + s);
}

struct MazeEpisode {
  MazeWorld world;
  Trajectory trajectory;
  friend bool operator==(const MazeEpisode&, const MazeEpisode&) = default;
};

struct EpisodeSet {
  TaskId task = TaskId::sort;
  std::vector<MazeEpisode> maze;
  std::vector<SortInstance> sort;
  std::vector<RecallInstance> recall;

  std::size_t size() const {
    return task == TaskId::mapping ? maze.size() : task == TaskId::sort ? sort.size() : recall.size();
  }
};

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kEpisodeVersion = 1;

namespace io {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

inline void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline float get_f32(std::istream& is) {
  const std::uint32_t v = get_u32(is);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

inline std::uint8_t get_u8(std::istream& is) {
  const int c = is.get();
  if (c == std::char_traits<char>::eof()) throw FormatError("truncated file");
  return static_cast<std::uint8_t>(c);
}

}  // namespace io

inline std::vector<std::uint32_t> episode_dims(const EpisodeSet& s) {
  switch (s.task) {
    case TaskId::mapping: {
      if (s.maze.empty()) return {0, 0, 0};
      const auto& e = s.maze.front();
      return {static_cast<std::uint32_t>(e.world.n), static_cast<std::uint32_t>(e.trajectory.positions.size()),
              static_cast<std::uint32_t>(e.trajectory.kind)};
    }
    case TaskId::sort:
      if (s.sort.empty()) return {0, 0};
      return {static_cast<std::uint32_t>(s.sort.front().vectors.size()),
              static_cast<std::uint32_t>(s.sort.front().vectors.front().size())};
    case TaskId::recall:
      if (s.recall.empty()) return {0, 0};
      return {static_cast<std::uint32_t>(s.recall.front().vectors.size()),
              static_cast<std::uint32_t>(s.recall.front().vectors.front().size())};
  }
  return {};
}

inline void write_episodes(std::ostream& os, const EpisodeSet& s) {
  const auto dims = episode_dims(s);
  os.write("MGT1", 4);
  io::put_u32(os, kEpisodeVersion);
  io::put_u32(os, static_cast<std::uint32_t>(s.task));
  io::put_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) io::put_u32(os, d);
  io::put_u32(os, static_cast<std::uint32_t>(s.size()));
  switch (s.task) {
    case TaskId::mapping:
      for (const auto& e : s.maze) {
        if (static_cast<std::uint32_t>(e.world.n) != dims[0] || e.trajectory.positions.size() != dims[1])
          throw std::invalid_argument("write_episodes: episodes differ in shape");
        if (e.world.n > 255) throw std::invalid_argument("write_episodes: world too large for u8 coordinates");
        for (auto c : e.world.cells) io::put_u8(os, c);
        io::put_u8(os, static_cast<std::uint8_t>(e.world.start.r));
        io::put_u8(os, static_cast<std::uint8_t>(e.world.start.c));
        for (const Pos p : e.trajectory.positions) {
          io::put_u8(os, static_cast<std::uint8_t>(p.r));
          io::put_u8(os, static_cast<std::uint8_t>(p.c));
        }
      }
      break;
    case TaskId::sort:
      for (const auto& e : s.sort) {
        if (e.vectors.size() != dims[0]) throw std::invalid_argument("write_episodes: episodes differ in shape");
        for (const auto& v : e.vectors) {
          if (v.size() != dims[1]) throw std::invalid_argument("write_episodes: episodes differ in shape");
          for (auto b : v) io::put_u8(os, b);
        }
        for (float p : e.priorities) io::put_f32(os, p);
      }
      break;
    case TaskId::recall:
      for (const auto& e : s.recall) {
        if (e.vectors.size() != dims[0]) throw std::invalid_argument("write_episodes: episodes differ in shape");
        for (const auto& v : e.vectors) {
          if (v.size() != dims[1]) throw std::invalid_argument("write_episodes: episodes differ in shape");
          for (auto b : v) io::put_u8(os, b);
        }
        io::put_u32(os, static_cast<std::uint32_t>(e.query));
      }
      break;
  }
  if (!os) throw std::runtime_error("write_episodes: stream error");
}

inline EpisodeSet read_episodes(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MGT1", 4) != 0) throw FormatError("not an episode file");
  const std::uint32_t version = io::get_u32(is);
  if (version != kEpisodeVersion) throw FormatError("unsupported episode file version " + std::to_string(version));
  EpisodeSet s;
  const std::uint32_t task = io::get_u32(is);
  if (task > 2) throw FormatError("unknown task id " + std::to_string(task));
  s.task = static_cast<TaskId>(task);
  const std::uint32_t ndims = io::get_u32(is);
  if (ndims > 8) throw FormatError("implausible dimension count");
  std::vector<std::uint32_t> dims(ndims);
  for (auto& d : dims) d = io::get_u32(is);
  const std::uint32_t count = io::get_u32(is);
  const std::size_t need = s.task == TaskId::mapping ? 3 : 2;
  if (ndims != need) throw FormatError("wrong dimension count for task");
  for (std::uint32_t k = 0; k < count; ++k) {
    switch (s.task) {
      case TaskId::mapping: {
        MazeEpisode e;
        e.world.n = static_cast<int>(dims[0]);
        e.world.cells.resize(std::size_t{dims[0]} * dims[0]);
        for (auto& c : e.world.cells) c = io::get_u8(is);
        e.world.start.r = io::get_u8(is);
        e.world.start.c = io::get_u8(is);
        e.trajectory.kind = static_cast<Motion>(dims[2]);
        for (std::uint32_t t = 0; t < dims[1]; ++t) {
          Pos p;
          p.r = io::get_u8(is);
          p.c = io::get_u8(is);
          e.trajectory.positions.push_back(p);
        }
        s.maze.push_back(std::move(e));
        break;
      }
      case TaskId::sort: {
        SortInstance e;
        for (std::uint32_t i = 0; i < dims[0]; ++i) {
          BitVector v(dims[1]);
          for (auto& b : v) b = io::get_u8(is);
          e.vectors.push_back(std::move(v));
        }
        for (std::uint32_t i = 0; i < dims[0]; ++i) e.priorities.push_back(io::get_f32(is));
        e.target = sorted_by_priority(e.vectors, e.priorities);
        s.sort.push_back(std::move(e));
        break;
      }
      case TaskId::recall: {
        RecallInstance e;
        for (std::uint32_t i = 0; i < dims[0]; ++i) {
          BitVector v(dims[1]);
          for (auto& b : v) b = io::get_u8(is);
          e.vectors.push_back(std::move(v));
        }
        e.query = io::get_u32(is);
        if (e.query + 1 >= e.vectors.size()) throw FormatError("recall query index out of range");
        e.target = e.vectors[e.query + 1];
        s.recall.push_back(std::move(e));
        break;
      }
    }
  }
  return s;
}

inline void save_episodes(const std::string& path, const EpisodeSet& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  write_episodes(f, s);
}

inline EpisodeSet load_episodes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  return read_episodes(f);
}

/// Human-readable listing of an episode set.
inline void dump_episodes(std::ostream& os, const EpisodeSet& s) {
  os << "task " << task_name(s.task) << " count " << s.size() << '\n';
  auto bits = [&os](const BitVector& v) {
    for (auto b : v) os << (b ? '1' : '0');
  };
  for (std::size_t k = 0; k < s.size(); ++k) {
    os << "episode " << k << '\n';
    switch (s.task) {
      case TaskId::mapping: {
        const auto& e = s.maze[k];
        for (int r = 0; r < e.world.n; ++r) {
          for (int c = 0; c < e.world.n; ++c)
            os << (Pos{r, c} == e.world.start ? 'S' : e.world.wall({r, c}) ? '#' : '.');
          os << '\n';
        }
        os << "path";
        for (const Pos p : e.trajectory.positions) os << ' ' << p.r << ',' << p.c;
        os << '\n';
        break;
      }
      case TaskId::sort: {
        const auto& e = s.sort[k];
        for (std::size_t i = 0; i < e.vectors.size(); ++i) {
          bits(e.vectors[i]);
          os << ' ' << e.priorities[i] << '\n';
        }
        os << "sorted";
        for (const auto& v : e.target) {
          os << ' ';
          bits(v);
        }
        os << '\n';
        break;
      }
      case TaskId::recall: {
        const auto& e = s.recall[k];
        for (const auto& v : e.vectors) {
          bits(v);
          os << '\n';
        }
        os << "query " << e.query << " -> ";
        bits(e.target);
        os << '\n';
        break;
      }
    }
  }
}

}  // namespace mgmem::tasks

#endif  // MGMEM_TASKS_EPISODE_IO_HPP
