// preqlab: command-line front end for generating task data, meta-training,
// evaluating prequential curves, probing chat models, compressing episodes and
// plotting stored results.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "preq/codec.hpp"
#include "preq/experiment.hpp"
#include "preq/llm_probe.hpp"
#include "preq/predictor.hpp"

namespace fs = std::filesystem;
using namespace preq;

namespace {

ExperimentConfig load_config(const std::string& path, const std::vector<std::uint64_t>& seeds,
                             const std::string& output_dir) {
  ExperimentConfig c = load_experiment_config(path);
  if (!seeds.empty()) c.seeds = seeds;
  if (!output_dir.empty()) c.output_dir = output_dir;
  c.validate();
  return c;
}

void print_curve(const PrequentialCurve& c) {
  std::printf("%-12s %-10s %8s %14s %14s\n", "learner", "family", "context", "error", "stderr");
  for (std::size_t i = 0; i < c.context_sizes.size(); ++i) {
    std::printf("%-12s %-10s %8d %14.6g %14.6g\n", c.learner.c_str(), c.family.c_str(), c.context_sizes[i],
                c.mean_error[i], c.stderr_[i]);
  }
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

std::shared_ptr<SequenceLearner<float>> load_learner(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  return std::make_shared<SequenceLearner<float>>(ck.config, std::move(ck.params));
}

const LearnerEntry& find_learner(const ExperimentConfig& c, const std::string& name) {
  for (const LearnerEntry& e : c.learners) {
    if (e.name == name) return e;
  }
  throw std::invalid_argument("no learner named " + name + " in the config");
}

std::vector<int> parse_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prequential in-context learning lab"};
  app.require_subcommand(1);

  std::string config_path, output_dir, out_path, checkpoint, data_stem, learner_name, grid_text;
  std::vector<std::uint64_t> seeds;

  // run
  auto* run_cmd = app.add_subcommand("run", "Generate, train, evaluate and store every learner and seed");
  run_cmd->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", seeds, "Override the config's seed list");
  run_cmd->add_option("--output-dir", output_dir, "Override the output directory");
  bool no_checkpoints = false;
  run_cmd->add_flag("--no-checkpoints", no_checkpoints, "Do not write model checkpoints");

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Write train and eval task datasets for each seed");
  gen_cmd->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--seed", seeds, "Override the config's seed list");
  gen_cmd->add_option("--out", out_path, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Meta-train one learner from a config");
  train_cmd->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--learner", learner_name, "Learner name in the config")->required();
  std::uint64_t seed = 0;
  train_cmd->add_option("--seed", seed, "Seed for data and initialization");
  train_cmd->add_option("--data", data_stem, "Train dataset stem written by 'generate'");
  train_cmd->add_option("--out", out_path, "Checkpoint path")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Prequential curve of a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data_stem, "Eval dataset stem")->required();
  eval_cmd->add_option("--grid", grid_text, "Comma-separated context sizes");
  std::string mode = "held_out_tail";
  int n_query = 16;
  eval_cmd->add_option("--mode", mode, "next_point or held_out_tail");
  eval_cmd->add_option("--n-query", n_query, "Held-out tail size");
  eval_cmd->add_option("--out", out_path, "Write the curve as JSON");

  // probe
  auto* probe_cmd = app.add_subcommand("probe", "Score a chat model on Mastermind episodes");
  std::string backend_name = "oracle", probe_config_path;
  int n_tasks = 5, n_points = 40;
  probe_cmd->add_option("--backend", backend_name, "oracle, uniform or http");
  probe_cmd->add_option("--probe-config", probe_config_path, "Probe settings (JSON)")->check(CLI::ExistingFile);
  probe_cmd->add_option("--tasks", n_tasks, "Number of Mastermind tasks");
  probe_cmd->add_option("--points", n_points, "Guesses per task");
  probe_cmd->add_option("--seed", seed, "Task seed");
  probe_cmd->add_option("--grid", grid_text, "Comma-separated context sizes");
  probe_cmd->add_option("--out", out_path, "Write per-query records as JSONL");

  // compress
  auto* comp_cmd = app.add_subcommand("compress", "Arithmetic-code an episode's labels under a model");
  comp_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint (omit for the marginal baseline)");
  comp_cmd->add_option("--data", data_stem, "Dataset stem")->required();
  std::size_t episode_index = 0;
  comp_cmd->add_option("--episode", episode_index, "Episode index");
  comp_cmd->add_option("--out", out_path, "Compressed stream path")->required();
  bool verify = false;
  comp_cmd->add_flag("--verify", verify, "Decode the stream and compare");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "SVG figures from stored results");
  std::string results_dir, experiment, gap_text;
  std::vector<std::string> learners;
  plot_cmd->add_option("--results", results_dir, "Results directory")->required();
  plot_cmd->add_option("--experiment", experiment, "Experiment id");
  plot_cmd->add_option("--learner", learners, "Learners to include");
  plot_cmd->add_option("--gap", gap_text, "Plot A - B, given as A,B");
  plot_cmd->add_option("--out", out_path, "Figure directory")->required();

  // report
  auto* report_cmd = app.add_subcommand("report", "Summarize stored results");
  report_cmd->add_option("--results", results_dir, "Results directory")->required();
  report_cmd->add_option("--experiment", experiment, "Experiment id");

  // visualize
  auto* viz_cmd = app.add_subcommand("visualize", "Inferred function of a 1-D regression model");
  viz_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint (omit for the oracle)");
  viz_cmd->add_option("--data", data_stem, "Dataset stem")->required();
  viz_cmd->add_option("--episode", episode_index, "Episode index");
  int context = 15, grid_points = 101;
  viz_cmd->add_option("--context", context, "Context length");
  viz_cmd->add_option("--grid-points", grid_points, "Evaluation points on [-1, 1]");
  viz_cmd->add_option("--out", out_path, "Output prefix (.json and .svg)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const ExperimentConfig c = load_config(config_path, seeds, output_dir);
      RunOptions opts;
      opts.save_checkpoints = !no_checkpoints;
      opts.log = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
      const RunSummary s = run(c, opts);
      std::printf("rows added %zu, units skipped %zu, failures %zu\n", s.rows_added, s.units_skipped,
                  s.failures.size());
      for (const auto& f : s.failures) std::printf("failed: %s\n", f.c_str());
      return s.failures.empty() ? 0 : 2;
    }
    if (*gen_cmd) {
      const ExperimentConfig c = load_config(config_path, seeds, "");
      for (std::uint64_t s : c.seeds) {
        const TaskSpec spec = finalize_spec(c.task, s);
        const MetaDatasetPair d =
            make_meta_datasets(spec, c.train_tasks, c.eval_tasks, c.train_points, c.eval_points, s);
        const Json prov = {{"seed", s}, {"config_hash", config_hash(c)}};
        const fs::path base = fs::path(out_path) / ("seed-" + std::to_string(s));
        save_dataset(base.string() + "-train", d.train, prov);
        save_dataset(base.string() + "-eval", d.eval, prov);
        std::printf("%s-{train,eval}\n", base.string().c_str());
      }
      return 0;
    }
    if (*train_cmd) {
      const ExperimentConfig c = load_config(config_path, {seed}, "");
      const LearnerEntry& e = find_learner(c, learner_name);
      const TaskSpec spec = finalize_spec(c.task, seed);
      MetaDataset train = data_stem.empty()
                              ? make_meta_datasets(spec, c.train_tasks, 1, c.train_points, 1, seed).train
                              : load_dataset(data_stem);
      TrainConfig tc = e.train.value_or(c.train);
      tc.seed = seed;
      TrainResult r = meta_train(configure_io(e.learner, train.spec), train, e.objective, tc, [](const EpochStats& s) {
        std::fprintf(stderr, "epoch %d loss %.6g (%.1fs)\n", s.epoch, s.mean_loss, s.seconds);
      });
      const Json meta = {{"config", to_json(c)},   {"config_hash", config_hash(c)}, {"learner", e.name},
                         {"seed", seed},           {"code_version", code_version()}, {"train", to_json(tc)}};
      save_checkpoint(out_path, r.learner, meta);
      write_loss_trace(out_path + ".trace.tsv", r.trace);
      std::printf("%s\n", out_path.c_str());
      return 0;
    }
    if (*eval_cmd) {
      LearnerPredictor pred(load_learner(checkpoint), fs::path(checkpoint).stem().string());
      const MetaDataset data = load_dataset(data_stem);
      EvalOptions opts;
      opts.mode = eval_mode_from_string(mode);
      opts.n_query = n_query;
      const int tail = opts.mode == EvalMode::held_out_tail ? n_query : 1;
      const int longest = data.episodes.empty() ? 0 : static_cast<int>(data.episodes.front().size());
      const std::vector<int> grid = grid_text.empty() ? default_grid(longest - tail) : parse_list(grid_text);
      PrequentialCurve curve = eval_curve(pred, data, grid, opts);
      curve.family = std::string(to_string(data.spec.family));
      print_curve(curve);
      if (!out_path.empty()) write_json(out_path, to_json(curve));
      return 0;
    }
    if (*probe_cmd) {
      probe::ProbeConfig pc;
      if (!probe_config_path.empty()) {
        std::ifstream in(probe_config_path);
        pc = probe_config_from_json(Json::parse(in));
      }
      std::unique_ptr<probe::Backend> backend;
      if (backend_name == "oracle") {
        backend = std::make_unique<probe::OracleBackend>();
      } else if (backend_name == "uniform") {
        backend = std::make_unique<probe::UniformBackend>();
      } else if (backend_name == "http") {
        backend = std::make_unique<probe::HttpBackend>(pc);
      } else {
        throw std::invalid_argument("unknown backend " + backend_name);
      }
      const MetaDataset tasks = make_meta_dataset(TaskSpec::mastermind(), n_tasks, n_points, seed, Split::eval);
      const std::vector<int> grid = grid_text.empty() ? default_grid(n_points - 1) : parse_list(grid_text);
      std::vector<probe::ProbeRecord> records;
      const PrequentialCurve curve = probe::probe_curve(*backend, tasks, grid, pc, &records);
      print_curve(curve);
      if (!out_path.empty()) {
        std::ofstream out(out_path);
        for (const auto& r : records) {
          out << Json{{"task", r.task},
                      {"context", r.context},
                      {"ok", r.result.ok},
                      {"predicted", {r.result.predicted.first, r.result.predicted.second}},
                      {"truth", {r.truth.exact, r.truth.common}},
                      {"retries", r.result.retries},
                      {"nats", r.score.nats},
                      {"from_logprobs", r.score.from_logprobs},
                      {"error", r.result.error}}
                     .dump()
              << '\n';
        }
      }
      return 0;
    }
    if (*comp_cmd) {
      const MetaDataset data = load_dataset(data_stem);
      const Episode& ep = data.episodes.at(episode_index);
      std::unique_ptr<Predictor> pred;
      if (checkpoint.empty()) {
        const IoShape io = io_shape(data.spec);
        pred = std::make_unique<MarginalPredictor>(io.n_labels, io.n_classes);
      } else {
        pred = std::make_unique<LearnerPredictor>(load_learner(checkpoint), "model");
      }
      const codec::CompressedEpisode c = codec::compress_episode(*pred, ep);
      {
        std::ofstream out(out_path, std::ios::binary);
        codec::write_stream(out, c.encoded.bits, c.n_symbols, codec::kDefaultPrecision);
      }
      std::printf("symbols %zu\nideal bits %.4f\nrealized bits %llu\n%s\n", c.n_symbols, c.encoded.ideal_bits,
                  static_cast<unsigned long long>(c.encoded.bits.length), c.report.overhead_note.c_str());
      if (verify) {
        std::ifstream in(out_path, std::ios::binary);
        const codec::StoredStream s = codec::read_stream(in);
        const Episode back = codec::decompress_episode(*pred, s.bits, ep, s.precision);
        bool same = back.size() == ep.size();
        for (std::size_t i = 0; same && i < ep.size(); ++i) same = back.points[i].labels == ep.points[i].labels;
        std::printf("roundtrip %s\n", same ? "ok" : "MISMATCH");
        return same ? 0 : 3;
      }
      return 0;
    }
    if (*plot_cmd) {
      ResultsStore store(results_dir);
      PlotSelection sel;
      sel.experiment = experiment;
      sel.learners = learners;
      if (!gap_text.empty()) {
        const auto comma = gap_text.find(',');
        if (comma == std::string::npos) throw std::invalid_argument("--gap expects A,B");
        sel.gap = std::make_pair(gap_text.substr(0, comma), gap_text.substr(comma + 1));
      }
      const PlotOutput out = emit_plots(store.rows(), sel, out_path);
      if (!out.notice.empty()) std::printf("%s\n", out.notice.c_str());
      for (const auto& f : out.files) std::printf("%s\n", f.string().c_str());
      return 0;
    }
    if (*report_cmd) {
      ResultsStore store(results_dir);
      std::vector<ResultsRow> rows;
      for (const auto& r : store.rows()) {
        if (experiment.empty() || r.experiment == experiment) rows.push_back(r);
      }
      if (rows.empty()) {
        std::printf("no results match the selection\n");
        return 0;
      }
      for (const PrequentialCurve& c : curves_from_rows(rows)) {
        std::printf("\n%s (%zu seeds, %s)\n", c.learner.c_str(), c.seeds.size(),
                    std::string(to_string(c.error_kind)).c_str());
        print_curve(c);
      }
      const auto failures = store.failures();
      if (!failures.empty()) std::printf("\n%zu recorded failures\n", failures.size());
      return 0;
    }
    if (*viz_cmd) {
      const MetaDataset data = load_dataset(data_stem);
      const Episode& ep = data.episodes.at(episode_index);
      std::unique_ptr<Predictor> pred;
      if (checkpoint.empty()) {
        pred = std::make_unique<OraclePredictor>();
      } else {
        pred = std::make_unique<LearnerPredictor>(load_learner(checkpoint), "model");
      }
      std::vector<double> grid;
      for (int i = 0; i < grid_points; ++i) grid.push_back(-1.0 + 2.0 * i / std::max(1, grid_points - 1));
      const InferredFunction f = visualize_inferred_function(*pred, ep, context, grid);
      write_json(out_path + ".json", to_json(f));
      std::ofstream(out_path + ".svg") << render_inferred_svg(f, ep, "context " + std::to_string(context));
      if (!f.coefficients.empty()) std::printf("excess-degree norm %.6g\n", f.excess_norm);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
