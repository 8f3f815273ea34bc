#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mgmem/routing.hpp"
#include "mgmem/train/trainer.hpp"
#include "mgmem/train/visual.hpp"

using namespace mgmem;
using namespace mgmem::routing;
namespace fs = std::filesystem;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Collects `--set a.b=v` values and any leftover `--a.b=v` / `--a.b v` flags.
Overrides collect_overrides(const std::vector<std::string>& sets, const std::vector<std::string>& extras) {
  Overrides out;
  auto split = [&](const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("override must be path=value: " + kv);
    out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  };
  for (const auto& s : sets) split(s);
  for (std::size_t k = 0; k < extras.size(); ++k) {
    const std::string& a = extras[k];
    if (a.rfind("--", 0) != 0) throw CLI::ValidationError("unexpected argument: " + a);
    const std::string body = a.substr(2);
    if (body.find('=') != std::string::npos) {
      split(body);
    } else {
      if (k + 1 >= extras.size()) throw CLI::ValidationError("missing value for " + a);
      out.emplace_back(body, extras[++k]);
    }
  }
  return out;
}

void print_summary(std::ostream& os, const EvalSummary& e) {
  os << "episodes " << e.count << " loss " << e.loss << '\n';
  for (std::size_t k = 0; k < e.names.size(); ++k)
    os << e.names[k] << ' ' << e.stats[k].mean << " +- " << e.stats[k].std << '\n';
}

int cmd_train(const std::string& config, const Overrides& ov, bool quiet) {
  const TrainConfig cfg = load_config(config, ov);
  fs::create_directories(cfg.out_dir);
  std::ofstream(fs::path(cfg.out_dir) / "config.json") << to_json_value(cfg).dump(2) << '\n';
  std::ofstream metrics(fs::path(cfg.out_dir) / "metrics.csv");
  std::ofstream eval(fs::path(cfg.out_dir) / "eval.csv");
  Trainer<float> tr(cfg);
  std::cerr << "task " << tasks::task_name(cfg.task) << " params " << tr.model().params().trainable_count()
            << " seed " << cfg.seed << '\n';
  TrainSinks sinks;
  sinks.metrics = &metrics;
  sinks.eval = cfg.eval_every ? &eval : nullptr;
  sinks.log = quiet ? nullptr : &std::cerr;
  sinks.write_checkpoints = true;
  const TrainOutcome out = tr.run(sinks);
  std::cout << "steps " << tr.step() << " seconds " << out.seconds << (out.stopped_early ? " (stopped early)" : "")
            << '\n';
  if (out.last_eval) print_summary(std::cout, *out.last_eval);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& testset, std::size_t batch, std::uint64_t query_seed,
             const std::string& out) {
  const CheckpointData ck = load_checkpoint(ckpt);
  TrainConfig cfg = config_from_checkpoint(ck);
  if (batch) cfg.batch = batch;
  Model<float> model = restore_model<float>(ck);
  check_task_fit(model, cfg);
  const tasks::EpisodeSet test = tasks::load_episodes(testset);
  const EvalSummary e = evaluate(model, cfg, test, query_seed);
  print_summary(std::cout, e);
  if (!out.empty()) {
    std::ofstream f(out);
    f << "metric,mean,std,count\n";
    for (std::size_t k = 0; k < e.names.size(); ++k)
      f << e.names[k] << ',' << e.stats[k].mean << ',' << e.stats[k].std << ',' << e.count << '\n';
  }
  return 0;
}

int cmd_gen_data(const std::string& task, std::uint64_t seed, std::size_t count, const std::string& out,
                 const std::string& config, const Overrides& ov, bool text) {
  json j = config.empty() ? json::object() : read_json_file(config);
  j["task"] = task;
  for (const auto& [k, v] : ov) apply_override(j, k, v);
  TrainConfig cfg;
  read_task_fields(j, cfg);
  Rng rng(seed);
  const tasks::EpisodeSet s = sample_episodes(cfg, count, rng);
  if (text) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    tasks::dump_episodes(f, s);
  } else {
    tasks::save_episodes(out, s);
  }
  std::cout << "wrote " << s.size() << ' ' << task << " episodes to " << out << '\n';
  return 0;
}

int cmd_dump(const std::string& in) {
  tasks::dump_episodes(std::cout, tasks::load_episodes(in));
  return 0;
}

int cmd_visualize(const std::string& ckpt, const std::string& episode_file, std::size_t index, std::size_t layer,
                  std::size_t level, int channel, const std::string& out) {
  const CheckpointData ck = load_checkpoint(ckpt);
  const TrainConfig cfg = config_from_checkpoint(ck);
  if (cfg.task != tasks::TaskId::mapping) throw SpecError("memory visualization needs a mapping checkpoint");
  Model<float> model = restore_model<float>(ck);
  const tasks::EpisodeSet eps = tasks::load_episodes(episode_file);
  if (eps.task != tasks::TaskId::mapping || index >= eps.maze.size())
    throw std::invalid_argument("episode file has no mapping episode " + std::to_string(index));
  const auto trace = mapping_trace(model, cfg, eps.maze[index]);
  const Tensor<float>& h = hidden_grid(trace.state, layer, level);
  const auto& head = *model.spec().readers.at(0).head;
  const std::size_t n = trace.seen.size();
  std::optional<std::size_t> ch;
  if (channel >= 0) ch = static_cast<std::size_t>(channel);
  if (h.shape().h == head.rows && h.shape().w == head.cols && head.crop_row + n <= h.shape().h &&
      head.crop_col + n <= h.shape().w) {
    const auto [r, best] = best_channel_pearson(h, trace.seen.explored_canvas(), n, head.crop_row, head.crop_col);
    std::cout << "best channel " << best << " |pearson| " << r << '\n';
    if (channel == -2) ch = best;
  }
  export_memory_visual(trace.state, layer, level, ch, out);
  std::cout << "wrote " << out << " and " << out << ".csv\n";
  return 0;
}

int cmd_routing(std::size_t layers, std::size_t levels, std::size_t coarsest, const std::string& out,
                const std::string& ppm) {
  if (levels > layers) throw std::invalid_argument("levels must not exceed layers");
  if (coarsest == 0) coarsest = layers + 1;
  const TopologySpec s = TopologySpec::multigrid(layers, levels, coarsest);
  const Prop1Report rep = verify_prop1(s, layers, levels);
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  write_prop1_csv(f, rep);
  if (!ppm.empty()) write_reach_ppm(ppm, reachable(s, {1, 1, 1, 1}));
  std::cout << (rep.passed() ? "all boxes contained" : "box containment FAILED") << '\n';
  if (auto d = coverage_depth(s, levels)) std::cout << "full coverage of level " << levels << " at layer " << *d << '\n';
  return rep.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multigrid memory networks"};
  app.require_subcommand(1);

  std::string config, ckpt, testset, out, task, episode, ppm, eval_out;
  std::vector<std::string> sets;
  std::uint64_t seed = 1, query_seed = 1;
  std::size_t count = 100, batch = 0, layer = 0, level = 0, index = 0, layers = 6, levels = 4, coarsest = 0;
  int channel = -2;
  bool quiet = false, text = false;

  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
  train->add_option("--set", sets, "override a config field: dotted.path=value");
  train->add_flag("--quiet", quiet, "no evaluation log on stderr");
  train->allow_extras();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a test set");
  ev->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--testset", testset)->required()->check(CLI::ExistingFile);
  ev->add_option("--batch", batch, "evaluation batch size (default: training batch)");
  ev->add_option("--query-seed", query_seed, "seed for localization queries");
  ev->add_option("--out", eval_out, "optional CSV summary");

  auto* gen = app.add_subcommand("gen-data", "write an episode file");
  gen->add_option("--task", task)->required()->check(CLI::IsMember({"mapping", "sort", "recall"}));
  gen->add_option("--seed", seed)->required();
  gen->add_option("--count", count)->required();
  gen->add_option("--out", out)->required();
  gen->add_option("--config", config, "take task parameters from a config file")->check(CLI::ExistingFile);
  gen->add_option("--set", sets, "override a task field: dotted.path=value");
  gen->add_flag("--text", text, "write a text listing instead of the binary format");
  gen->allow_extras();

  auto* dump = app.add_subcommand("dump-data", "print an episode file as text");
  dump->add_option("file", episode)->required()->check(CLI::ExistingFile);

  auto* vis = app.add_subcommand("visualize-memory", "export a writer hidden-state grid as PGM");
  vis->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  vis->add_option("--episode", episode)->required()->check(CLI::ExistingFile);
  vis->add_option("--index", index, "episode index in the file");
  vis->add_option("--layer", layer, "writer layer, 0-based")->required();
  vis->add_option("--level", level, "pyramid level, 0-based, coarsest first")->required();
  vis->add_option("--channel", channel, "channel; -1 max-abs over channels; -2 best-correlated (default)");
  vis->add_option("--out", out)->required();

  auto* route = app.add_subcommand("analyze-routing", "check box containment of multigrid receptive fields");
  route->add_option("--layers", layers)->required()->check(CLI::PositiveNumber);
  route->add_option("--levels", levels)->required()->check(CLI::PositiveNumber);
  route->add_option("--coarsest", coarsest, "coarsest grid side (default layers + 1)");
  route->add_option("--out", out)->required();
  route->add_option("--ppm", ppm, "optional reach-map image");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, collect_overrides(sets, train->remaining()), quiet);
    if (*ev) return cmd_eval(ckpt, testset, batch, query_seed, eval_out);
    if (*gen) return cmd_gen_data(task, seed, count, out, config, collect_overrides(sets, gen->remaining()), text);
    if (*dump) return cmd_dump(episode);
    if (*vis) return cmd_visualize(ckpt, episode, index, layer, level, channel, out);
    if (*route) return cmd_routing(layers, levels, coarsest, out, ppm);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
