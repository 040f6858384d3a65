#pragma once

// Experiment orchestration: versioned configs, an append-only results table,
// checkpoints, dataset files, SVG figures and inferred-function dumps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "preq/learners.hpp"
#include "preq/objectives.hpp"
#include "preq/preq_eval.hpp"
#include "preq/serialize.hpp"
#include "preq/sgd_baseline.hpp"
#include "preq/tasks.hpp"

namespace preq {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kResultsFormatVersion = 1;
inline constexpr int kDatasetFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string code_version();

struct LearnerEntry {
  std::string name;
  LearnerConfig learner;
  ObjectiveSpec objective;
  std::optional<TrainConfig> train;  // overrides the experiment's train block
};

struct BaselineEntry {
  std::string name = "sgd";
  BaselineConfig config;
  int n_eval = 16;  // tail points scored per episode
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string experiment;
  TaskSpec task;
  std::vector<LearnerEntry> learners;
  std::optional<BaselineEntry> baseline;
  bool marginal_baseline = false;
  TrainConfig train;
  int train_tasks = 2000;
  int train_points = 65;
  int eval_tasks = 200;
  int eval_points = 80;
  std::vector<int> grid;  // empty: default_grid over the eval context range
  EvalOptions eval;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";

  void validate() const;
  // Grid actually evaluated.
  [[nodiscard]] std::vector<int> eval_grid() const;
};

Json to_json(const ExperimentConfig& c);
// Rejects unknown fields and unsupported schema versions, then validates.
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// FNV-1a over the key-sorted compact dump, as 16 hex digits.
std::string config_hash(const Json& j);
std::string config_hash(const ExperimentConfig& c);

// ---------------------------------------------------------------------------
// Results store

struct ResultsRow {
  std::string experiment;
  std::string learner;
  std::string objective;
  std::string family;
  int context_size = 0;
  std::uint64_t seed = 0;
  double error = 0.0;
  double stderr_ = 0.0;  // across evaluation episodes
  ErrorKind error_kind = ErrorKind::mse;
  std::string timestamp;
  std::string code_version;
  std::string config_hash;

  bool operator==(const ResultsRow&) const = default;
};

std::string format_rows(std::span<const ResultsRow> rows);
std::vector<ResultsRow> parse_rows(const std::string& text);

// results.tsv plus results.manifest.json in one directory. Appends hold an
// exclusive file lock and re-read the table before writing.
class ResultsStore {
 public:
  explicit ResultsStore(std::filesystem::path dir);

  [[nodiscard]] const std::vector<ResultsRow>& rows() const { return rows_; }
  [[nodiscard]] bool contains(const std::string& experiment, const std::string& learner, int size,
                              std::uint64_t seed) const;
  // All-or-nothing; throws on a key that is already stored or repeated in `rows`.
  void append(std::span<const ResultsRow> rows, const Json& config = nullptr);
  void record_failure(const Json& failure);
  [[nodiscard]] std::vector<Json> failures() const;
  void reload();

  [[nodiscard]] std::filesystem::path table_path() const { return dir_ / "results.tsv"; }
  [[nodiscard]] std::filesystem::path manifest_path() const { return dir_ / "results.manifest.json"; }
  [[nodiscard]] std::filesystem::path failures_path() const { return dir_ / "failures.jsonl"; }

 private:
  std::filesystem::path dir_;
  std::vector<ResultsRow> rows_;
};

// Per-(family, learner) curves from stored rows, seeds combined.
std::vector<PrequentialCurve> curves_from_rows(std::span<const ResultsRow> rows);

// ---------------------------------------------------------------------------
// Artifacts

struct Checkpoint {
  LearnerConfig config;
  ParamSet<float> params;
  Json meta;
};

// "PQCK", u32 version, u64 header length, JSON header, float32 tensors (little endian).
void save_checkpoint(const std::filesystem::path& path, const SequenceLearner<float>& learner,
                     const Json& meta = Json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

// <stem>.json manifest plus <stem>.bin holding float64 x, y and label values.
void save_dataset(const std::filesystem::path& stem, const MetaDataset& data,
                  const Json& provenance = Json::object());
MetaDataset load_dataset(const std::filesystem::path& stem);

void write_loss_trace(const std::filesystem::path& path, std::span<const EpochStats> trace);
std::vector<EpochStats> read_loss_trace(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Runs

struct RunOptions {
  bool save_checkpoints = true;
  std::function<void(const std::string&)> log;
};

struct RunSummary {
  std::size_t rows_added = 0;
  std::size_t units_skipped = 0;  // (learner, seed) pairs already stored
  std::vector<std::string> failures;
};

// generate -> train -> evaluate -> persist for every (learner, seed). Stored
// units are skipped; a failing unit is recorded and the rest still run.
RunSummary run(const ExperimentConfig& config, const RunOptions& options = {});

// ---------------------------------------------------------------------------
// Figures

struct PlotSeries {
  std::string label;
  PrequentialCurve curve;
};

// Mean lines with standard-error bands; byte-identical for identical input.
std::string render_svg(const std::string& title, const std::string& y_label,
                       std::span<const PlotSeries> series);

struct PlotSelection {
  std::string experiment;              // empty: all
  std::vector<std::string> learners;   // empty: all
  std::optional<std::pair<std::string, std::string>> gap;  // plot a - b instead
};

struct PlotOutput {
  std::vector<std::filesystem::path> files;
  std::string notice;  // set when nothing matched
};

// One figure per (family, error kind) in the selection.
PlotOutput emit_plots(std::span<const ResultsRow> rows, const PlotSelection& selection,
                      const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Inferred functions

struct InferredFunction {
  int context = 0;
  std::vector<double> grid;
  std::vector<double> predicted;
  std::vector<double> truth;
  std::vector<double> coefficients;  // empty unless the predictor has them
  double excess_norm = 0.0;          // L2 norm of coefficients above the generating degree
};

// Norm of alpha[degree + 1 ..].
double excess_degree_norm(std::span<const double> alpha, int degree);

// Predictions on `grid` after observing the first `context` points of a 1-D
// regression episode.
InferredFunction visualize_inferred_function(const Predictor& predictor, const Episode& episode,
                                             int context, std::span<const double> grid);

Json to_json(const InferredFunction& f);
std::string render_inferred_svg(const InferredFunction& f, const Episode& episode,
                                const std::string& title);

}  // namespace preq
