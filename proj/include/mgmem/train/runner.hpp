#ifndef MGMEM_TRAIN_RUNNER_HPP
#define MGMEM_TRAIN_RUNNER_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgmem/assemblies.hpp"
#include "mgmem/tasks/algorithmic.hpp"
#include "mgmem/tasks/episode_io.hpp"
#include "mgmem/tasks/maze.hpp"
#include "mgmem/tasks/metrics.hpp"
#include "mgmem/train/config.hpp"

namespace mgmem {

/// Either network kind behind one interface.
template <typename T>
struct Model {
  std::optional<WriterReaderNet<T>> wr;
  std::optional<EncoderDecoderNet<T>> ed;

  static Model build(const NetworkSpec& spec, Rng& rng) {
    Model m;
    if (spec.kind == NetKind::writer_reader)
      m.wr = WriterReaderNet<T>::build(spec, rng);
    else
      m.ed = EncoderDecoderNet<T>::build(spec, rng);
    return m;
  }

  ParamSet<T>& params() { return wr ? wr->params() : ed->params(); }
  const ParamSet<T>& params() const { return wr ? wr->params() : ed->params(); }
  const NetworkSpec& spec() const { return wr ? wr->spec() : ed->spec(); }
};

inline std::vector<std::string> metric_names(tasks::TaskId t) {
  if (t == tasks::TaskId::mapping) return {"precision", "recall", "f"};
  return {"bit_error"};
}

/// Index of the metric used for early stopping, and whether larger is better.
inline std::pair<std::size_t, bool> primary_metric(tasks::TaskId t) {
  return t == tasks::TaskId::mapping ? std::pair<std::size_t, bool>{2, true} : std::pair<std::size_t, bool>{0, false};
}

/// Fresh random episodes for the configured task.
inline tasks::EpisodeSet sample_episodes(const TrainConfig& c, std::size_t count, Rng& rng) {
  tasks::EpisodeSet s;
  s.task = c.task;
  for (std::size_t k = 0; k < count; ++k) {
    switch (c.task) {
      case tasks::TaskId::sort: s.sort.push_back(tasks::gen_sort(c.vec.length, c.vec.dims, rng)); break;
      case tasks::TaskId::recall: s.recall.push_back(tasks::gen_recall(c.vec.length, c.vec.dims, rng)); break;
      case tasks::TaskId::mapping: {
        const tasks::MazeWorld w =
            c.map.wall_density > 0 ? tasks::gen_maze(c.map.world, c.map.wall_density, rng) : tasks::open_world(c.map.world);
        tasks::Trajectory tr = c.map.motion == tasks::Motion::spiral
                                   ? tasks::spiral_trajectory(w, c.map.steps, c.map.margin)
                                   : tasks::random_walk(w, c.map.steps, rng);
        s.maze.push_back({w, std::move(tr)});
        break;
      }
    }
  }
  return s;
}

inline tasks::EpisodeSet slice(const tasks::EpisodeSet& s, std::size_t begin, std::size_t end) {
  tasks::EpisodeSet out;
  out.task = s.task;
  auto cut = [&](const auto& v, auto& dst) { dst.assign(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end)); };
  if (end > s.size() || begin > end) throw std::out_of_range("slice: bad episode range");
  if (s.task == tasks::TaskId::mapping) cut(s.maze, out.maze);
  if (s.task == tasks::TaskId::sort) cut(s.sort, out.sort);
  if (s.task == tasks::TaskId::recall) cut(s.recall, out.recall);
  return out;
}

template <typename T>
struct BatchResult {
  double loss = 0;
  std::vector<Tensor<T>> grads;
  std::vector<std::vector<double>> metrics;  // per instance, in metric_names order
  NetState<T> final_state;                   // writer state after the episode (writer-reader only)
};

namespace detail {

template <typename T>
std::vector<double> probabilities(const Tensor<T>& logits, std::size_t b) {
  const std::size_t per = logits.size() / logits.shape().b;
  std::vector<double> p(per);
  for (std::size_t k = 0; k < per; ++k) {
    const double z = static_cast<double>(logits[b * per + k]);
    p[k] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return p;
}

template <typename T>
Tensor<T> grid_batch(const std::vector<tasks::BitVector>& vs, std::size_t rows, std::size_t cols) {
  std::vector<Tensor<T>> items;
  for (const auto& v : vs) items.push_back(tasks::bits_grid<T>(v, rows, cols));
  return tasks::stack_batch(items);
}

}  // namespace detail

/// Writer-reader sequence of a mapping batch plus the ground-truth masks of
/// every supervised step.
template <typename T>
struct MappingSequence {
  std::vector<WRStep<T>> steps;
  std::vector<std::vector<std::vector<std::uint8_t>>> masks;  // [t][b], empty when unsupervised
  std::vector<tasks::SeenMap> seen;                           // per episode, at the end
};

template <typename T>
MappingSequence<T> mapping_sequence(const TrainConfig& c, const std::vector<tasks::MazeEpisode>& eps, Rng& rng) {
  MappingSequence<T> seq;
  const std::size_t B = eps.size();
  const std::size_t Tn = eps.front().trajectory.positions.size();
  for (const auto& e : eps) {
    if (e.trajectory.positions.size() != Tn) throw ShapeError("mapping batch: trajectories differ in length");
    seq.seen.emplace_back(e.world.n, e.world.start);
  }
  const int N = seq.seen.front().size();
  std::vector<std::optional<tasks::LocalizationQuery>> fixed(B);
  for (std::size_t t = 0; t < Tn; ++t) {
    std::vector<Tensor<T>> obs;
    for (std::size_t b = 0; b < B; ++b) {
      const auto& e = eps[b];
      const tasks::Pos p = e.trajectory.positions[t];
      obs.push_back(tasks::observe<T>(e.world, p, e.world.start, c.map.observe));
      seq.seen[b].mark(e.world, p, c.map.observe);
    }
    WRStep<T> step{tasks::stack_batch(obs), {}, {}};
    std::vector<std::vector<std::uint8_t>> masks;
    if (t + 1 >= c.map.t_min) {
      std::vector<Tensor<T>> q, y;
      for (std::size_t b = 0; b < B; ++b) {
        const auto& e = eps[b];
        tasks::LocalizationQuery lq;
        if (c.map.resample_query || !fixed[b]) {
          lq = tasks::sample_query(seq.seen[b], e.world, c.map.query, rng);
          fixed[b] = lq;
        } else {
          lq = *fixed[b];
          lq.mask = tasks::match_mask(seq.seen[b], e.world, c.map.query, lq.patch);
        }
        q.push_back(tasks::query_tensor<T>(lq));
        Tensor<T> target({1, static_cast<std::size_t>(N), static_cast<std::size_t>(N), 1});
        for (std::size_t k = 0; k < lq.mask.size(); ++k) target[k] = static_cast<T>(lq.mask[k]);
        y.push_back(std::move(target));
        masks.push_back(std::move(lq.mask));
      }
      step.reader_in.push_back(tasks::stack_batch(q));
      step.target.push_back(tasks::stack_batch(y));
    }
    seq.steps.push_back(std::move(step));
    seq.masks.push_back(std::move(masks));
  }
  return seq;
}

/// One pass over a batch of episodes: loss, optional gradients, per-instance metrics.
template <typename T>
BatchResult<T> run_batch(Model<T>& model, const TrainConfig& c, const tasks::EpisodeSet& eps, Rng& query_rng,
                         bool differentiate, bool training) {
  BatchResult<T> out;
  UnrollOptions opt;
  opt.truncation = c.truncation;
  opt.differentiate = differentiate;
  opt.training = training;
  const std::size_t B = eps.size();
  if (B == 0) throw std::invalid_argument("run_batch: empty batch");
  switch (c.task) {
    case tasks::TaskId::sort: {
      if (!model.ed) throw SpecError("sort needs an encoder-decoder network");
      EDSequence<T> seq;
      const std::size_t L = eps.sort.front().vectors.size();
      for (std::size_t t = 0; t < L; ++t) {
        std::vector<Tensor<T>> xs;
        for (const auto& s : eps.sort) xs.push_back(tasks::sort_input<T>(s, t, c.vec.rows, c.vec.cols));
        seq.inputs.push_back(tasks::stack_batch(xs));
      }
      for (std::size_t t = 0; t < L; ++t) {
        std::vector<tasks::BitVector> ys;
        for (const auto& s : eps.sort) ys.push_back(s.target[t]);
        seq.targets.push_back(detail::grid_batch<T>(ys, c.vec.rows, c.vec.cols));
      }
      UnrollResult<T> r = unroll(*model.ed, seq, opt);
      out.loss = static_cast<double>(r.loss);
      out.grads = std::move(r.grads);
      for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> pred;
        std::vector<std::uint8_t> truth;
        for (std::size_t t = 0; t < L; ++t) {
          const auto p = detail::probabilities(*r.outputs[t][0], b);
          pred.insert(pred.end(), p.begin(), p.end());
          truth.insert(truth.end(), eps.sort[b].target[t].begin(), eps.sort[b].target[t].end());
        }
        out.metrics.push_back({tasks::metrics_bit_error(pred, truth)});
      }
      break;
    }
    case tasks::TaskId::recall: {
      if (!model.wr) throw SpecError("recall needs a writer-reader network");
      std::vector<WRStep<T>> seq;
      const std::size_t L = eps.recall.front().vectors.size();
      for (std::size_t t = 0; t <= L; ++t) {
        std::vector<Tensor<T>> xs;
        for (const auto& r : eps.recall) xs.push_back(tasks::recall_input<T>(r, t, c.vec.rows, c.vec.cols));
        WRStep<T> s{tasks::stack_batch(xs), {}, {}};
        if (t == L) {
          std::vector<tasks::BitVector> qs, ys;
          for (const auto& r : eps.recall) {
            qs.push_back(r.vectors[r.query]);
            ys.push_back(r.target);
          }
          s.reader_in.push_back(detail::grid_batch<T>(qs, c.vec.rows, c.vec.cols));
          s.target.push_back(detail::grid_batch<T>(ys, c.vec.rows, c.vec.cols));
        }
        seq.push_back(std::move(s));
      }
      UnrollResult<T> r = unroll(*model.wr, seq, model.wr->init_state(B), opt);
      out.loss = static_cast<double>(r.loss);
      out.grads = std::move(r.grads);
      out.final_state = std::move(r.state);
      for (std::size_t b = 0; b < B; ++b)
        out.metrics.push_back({tasks::metrics_bit_error(detail::probabilities(*r.outputs[L][0], b), eps.recall[b].target)});
      break;
    }
    case tasks::TaskId::mapping: {
      if (!model.wr) throw SpecError("mapping needs a writer-reader network");
      const MappingSequence<T> seq = mapping_sequence<T>(c, eps.maze, query_rng);
      UnrollResult<T> r = unroll(*model.wr, seq.steps, model.wr->init_state(B), opt);
      out.loss = static_cast<double>(r.loss);
      out.grads = std::move(r.grads);
      out.final_state = std::move(r.state);
      std::vector<std::vector<double>> sums(B, std::vector<double>(3, 0.0));
      std::size_t supervised = 0;
      for (std::size_t t = 0; t < seq.steps.size(); ++t) {
        if (seq.masks[t].empty()) continue;
        ++supervised;
        for (std::size_t b = 0; b < B; ++b) {
          const auto m = tasks::metrics_prf(detail::probabilities(*r.outputs[t][0], b), seq.masks[t][b], 0.5);
          sums[b][0] += m.precision;
          sums[b][1] += m.recall;
          sums[b][2] += m.f;
        }
      }
      for (auto& s : sums) {
        if (supervised)
          for (auto& v : s) v /= static_cast<double>(supervised);
        out.metrics.push_back(s);
      }
      break;
    }
  }
  return out;
}

/// Checks that a network fits the configured task's tensor shapes.
template <typename T>
void check_task_fit(const Model<T>& model, const TrainConfig& c) {
  const NetworkSpec& s = model.spec();
  auto input_is = [](const StackDesc& st, std::size_t r, std::size_t cc, std::size_t ch) {
    return st.input.levels.size() == 1 && st.input.levels[0] == LevelSpec{r, cc, ch};
  };
  switch (c.task) {
    case tasks::TaskId::sort:
      if (!input_is(s.memory, c.vec.rows, c.vec.cols, 2) || !s.decoder || !s.decoder->head ||
          s.decoder->head->kind != HeadKind::pixel || s.decoder->head->rows != c.vec.rows ||
          s.decoder->head->cols != c.vec.cols || s.decoder->head->outputs != 1 || s.decoder->head->crop_rows != 0)
        throw SpecError("sort network does not fit the vector grid");
      break;
    case tasks::TaskId::recall:
      if (!input_is(s.memory, c.vec.rows, c.vec.cols, 2) || s.readers.size() != 1 ||
          !input_is(s.readers[0], c.vec.rows, c.vec.cols, 1) || s.readers[0].head->rows != c.vec.rows ||
          s.readers[0].head->cols != c.vec.cols || s.readers[0].head->crop_rows != 0)
        throw SpecError("recall network does not fit the vector grid");
      break;
    case tasks::TaskId::mapping: {
      const auto m = static_cast<std::size_t>(c.map.observe), k = static_cast<std::size_t>(c.map.query);
      const auto N = static_cast<std::size_t>(2 * c.map.world - 1);
      if (!input_is(s.memory, m, m, 4) || s.readers.size() != 1 || !input_is(s.readers[0], k, k, 2))
        throw SpecError("mapping network inputs do not fit the observation and query sizes");
      const auto& h = *s.readers[0].head;
      const std::size_t rows = h.crop_rows ? h.crop_rows : h.rows, cols = h.crop_cols ? h.crop_cols : h.cols;
      if (h.kind != HeadKind::pixel || rows != N || cols != N || h.outputs != 1)
        throw SpecError("mapping head must produce the " + std::to_string(N) + "x" + std::to_string(N) + " canvas");
      break;
    }
  }
}

struct EvalSummary {
  std::vector<std::string> names;
  std::vector<tasks::MeanStd> stats;
  std::size_t count = 0;
  double loss = 0;  // mean per batch
};

/// Inference over a test set in batches; never updates parameters.
template <typename T>
EvalSummary evaluate(Model<T>& model, const TrainConfig& c, const tasks::EpisodeSet& test, std::uint64_t query_seed) {
  if (test.task != c.task) throw SpecError("test set task differs from the model's task");
  EvalSummary out;
  out.names = metric_names(c.task);
  out.count = test.size();
  std::vector<std::vector<double>> per_metric(out.names.size());
  Rng qrng(query_seed);
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < test.size(); begin += c.batch) {
    const std::size_t end = std::min(test.size(), begin + c.batch);
    const BatchResult<T> r = run_batch(model, c, slice(test, begin, end), qrng, false, false);
    out.loss += r.loss;
    ++batches;
    for (const auto& m : r.metrics)
      for (std::size_t k = 0; k < m.size(); ++k) per_metric[k].push_back(m[k]);
  }
  if (batches) out.loss /= static_cast<double>(batches);
  for (const auto& v : per_metric) out.stats.push_back(tasks::mean_std(v));
  return out;
}

}  // namespace mgmem

#endif  // MGMEM_TRAIN_RUNNER_HPP
