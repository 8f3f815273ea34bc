#ifndef MGMEM_TRAIN_TRAINER_HPP
#define MGMEM_TRAIN_TRAINER_HPP

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>

#include "mgmem/train/checkpoint.hpp"
#include "mgmem/train/config.hpp"
#include "mgmem/train/optim.hpp"
#include "mgmem/train/runner.hpp"

namespace mgmem {

struct StepLog {
  std::size_t step = 0;
  double loss = 0;
  std::vector<double> metrics;  // batch means, metric_names order
  double grad_norm = 0;
};

struct TrainOutcome {
  std::size_t steps = 0;
  double seconds = 0;
  bool stopped_early = false;
  std::optional<EvalSummary> last_eval;
};

/// Streams for run output; any may be null.
struct TrainSinks {
  std::ostream* metrics = nullptr;  // step,loss,<metrics>,seconds
  std::ostream* eval = nullptr;     // step,loss,<metric>_mean,<metric>_std,seconds
  std::ostream* log = nullptr;
  bool write_checkpoints = false;  // into cfg.out_dir
};

template <typename T>
class Trainer {
public:
  /// Parameters are drawn from `seed`; episodes from a stream derived from it.
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    Rng init(cfg_.seed);
    model_ = Model<T>::build(cfg_.network, init);
    check_task_fit(model_, cfg_);
    opt_ = RMSPropState<T>::init(model_.params(), cfg_.lr, cfg_.rho, cfg_.eps);
    data_rng_ = Rng(cfg_.seed ^ 0x9e3779b97f4a7c15ull);
  }

  /// Resumes parameters, optimizer state, data stream and step counter.
  Trainer(TrainConfig cfg, const CheckpointData& ck)
      : cfg_(std::move(cfg)), model_(restore_model<T>(ck)), step_(ck.step) {
    check_task_fit(model_, cfg_);
    opt_ = restore_optimizer(ck, model_.params());
    data_rng_ = rng_from_string(ck.rng_state);
  }

  Model<T>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t step() const { return step_; }
  RMSPropState<T>& optimizer() { return opt_; }
  Rng& data_rng() { return data_rng_; }

  CheckpointData checkpoint() const { return make_checkpoint(model_, opt_, data_rng_, step_, to_json_value(cfg_).dump()); }

  /// One optimizer update on a freshly sampled batch.
  StepLog train_step() {
    const tasks::EpisodeSet batch = sample_episodes(cfg_, cfg_.batch, data_rng_);
    BatchResult<T> r = run_batch(model_, cfg_, batch, data_rng_, true, true);
    StepLog log;
    log.loss = r.loss;
    log.grad_norm = clip_global_norm(r.grads, cfg_.clip);
    opt_.lr = scheduled_lr(cfg_, step_ + 1);
    rmsprop_step(model_.params(), r.grads, opt_);
    log.step = ++step_;
    log.metrics.assign(metric_names(cfg_.task).size(), 0.0);
    for (const auto& m : r.metrics)
      for (std::size_t k = 0; k < m.size(); ++k) log.metrics[k] += m[k] / static_cast<double>(r.metrics.size());
    return log;
  }

  /// Held-out episodes drawn from eval_seed; identical across runs.
  const tasks::EpisodeSet& eval_set() {
    if (!eval_set_) {
      Rng r(cfg_.eval_seed);
      eval_set_ = sample_episodes(cfg_, cfg_.eval_count, r);
    }
    return *eval_set_;
  }

  EvalSummary evaluate_held_out() { return evaluate(model_, cfg_, eval_set(), cfg_.eval_seed + 1); }

  TrainOutcome run(const TrainSinks& sinks = {}) {
    namespace fs = std::filesystem;
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };
    const auto names = metric_names(cfg_.task);
    if (sinks.write_checkpoints) fs::create_directories(cfg_.out_dir);
    if (sinks.metrics) {
      *sinks.metrics << "step,loss";
      for (const auto& n : names) *sinks.metrics << ',' << n;
      *sinks.metrics << ",seconds\n";
    }
    if (sinks.eval) {
      *sinks.eval << "step,loss";
      for (const auto& n : names) *sinks.eval << ',' << n << "_mean," << n << "_std";
      *sinks.eval << ",seconds\n";
    }
    auto save = [&](const std::string& file) {
      if (sinks.write_checkpoints) save_checkpoint((fs::path(cfg_.out_dir) / file).string(), checkpoint());
    };
    TrainOutcome out;
    const auto [primary, larger_better] = primary_metric(cfg_.task);
    while (step_ < cfg_.steps) {
      StepLog log;
      try {
        log = train_step();
      } catch (const NumericError&) {
        save("diverged.mgmc");
        throw;
      }
      ++out.steps;
      if (sinks.metrics && (cfg_.log_every == 0 || log.step % cfg_.log_every == 0 || step_ == cfg_.steps)) {
        *sinks.metrics << log.step << ',' << std::setprecision(8) << log.loss;
        for (double m : log.metrics) *sinks.metrics << ',' << m;
        *sinks.metrics << ',' << std::setprecision(6) << elapsed() << '\n';
        sinks.metrics->flush();
      }
      if (cfg_.checkpoint_every && step_ % cfg_.checkpoint_every == 0) save("step_" + std::to_string(step_) + ".mgmc");
      bool stop = false;
      if (cfg_.eval_every && step_ % cfg_.eval_every == 0) {
        out.last_eval = evaluate_held_out();
        const EvalSummary& e = *out.last_eval;
        if (sinks.eval) {
          *sinks.eval << step_ << ',' << std::setprecision(8) << e.loss;
          for (const auto& s : e.stats) *sinks.eval << ',' << s.mean << ',' << s.std;
          *sinks.eval << ',' << std::setprecision(6) << elapsed() << '\n';
          sinks.eval->flush();
        }
        if (sinks.log) {
          *sinks.log << "step " << step_ << " eval";
          for (std::size_t k = 0; k < names.size(); ++k)
            *sinks.log << ' ' << names[k] << ' ' << e.stats[k].mean << " +- " << e.stats[k].std;
          *sinks.log << '\n';
        }
        if (cfg_.stop_at) {
          const double v = e.stats[primary].mean;
          stop = larger_better ? v >= *cfg_.stop_at : v <= *cfg_.stop_at;
        }
      }
      if (cfg_.max_seconds > 0 && elapsed() >= cfg_.max_seconds) stop = true;
      if (stop) {
        out.stopped_early = step_ < cfg_.steps;
        break;
      }
    }
    save("final.mgmc");
    out.seconds = elapsed();
    return out;
  }

private:
  TrainConfig cfg_;
  Model<T> model_;
  RMSPropState<T> opt_;
  Rng data_rng_;
  std::size_t step_ = 0;
  std::optional<tasks::EpisodeSet> eval_set_;
};

/// Training config stored in a checkpoint, or a minimal one rebuilt from its spec.
inline TrainConfig config_from_checkpoint(const CheckpointData& ck) {
  if (ck.config_json.empty()) throw tasks::FormatError("checkpoint carries no training config");
  TrainConfig c = train_config_from_json(json::parse(ck.config_json));
  c.network = ck.spec;
  return c;
}

}  // namespace mgmem

#endif  // MGMEM_TRAIN_TRAINER_HPP
