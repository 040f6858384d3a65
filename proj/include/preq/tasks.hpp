#pragma once

// Synthetic supervised task families and the episode / meta-dataset containers
// that prequential coding runs over.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "preq/hmm.hpp"
#include "preq/rng.hpp"

namespace preq {

enum class Family { linear, sinusoid, mastermind, chebyshev, hmm, hmm_supervised };

std::string_view to_string(Family f);
Family family_from_string(std::string_view name);

struct TaskSpec {
  Family family = Family::linear;
  int input_dim = 3;
  double noise_var = 0.0;
  int n_terms = 3;                   // sinusoid L
  std::vector<double> shared_freqs;  // sinusoid, n_terms * input_dim entries
  int code_length = 8;
  int alphabet_size = 6;
  int gen_degree = 1;                // chebyshev
  int basis_size = 8;                // chebyshev
  HmmHyper hmm;
  double hmm_eval_fraction = 0.25;

  static TaskSpec linear(int input_dim = 3, double noise_var = 0.04);
  static TaskSpec sinusoid(int input_dim = 1, int n_terms = 3);
  static TaskSpec mastermind(int code_length = 8, int alphabet_size = 6);
  static TaskSpec chebyshev(int gen_degree = 1, int basis_size = 8, double noise_var = 0.04);
  static TaskSpec hidden_markov(const HmmHyper& hyper = {});

  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

// What a task family looks like to a learner.
struct IoShape {
  int x_dim = 0;
  int y_dim = 0;       // continuous outputs
  int n_labels = 0;    // classification heads
  int n_classes = 0;   // classes per head
  [[nodiscard]] bool categorical() const { return n_labels > 0; }
};

IoShape io_shape(const TaskSpec& spec);

struct DataPoint {
  std::vector<double> x;
  std::vector<double> y;     // continuous families
  std::vector<int> labels;   // categorical families
  bool operator==(const DataPoint&) const = default;
};

struct LinearParams {
  std::vector<double> w;
  double b = 0.0;
  bool operator==(const LinearParams&) const = default;
};
struct SinusoidParams {
  std::vector<double> alpha;
  bool operator==(const SinusoidParams&) const = default;
};
struct MastermindParams {
  std::vector<int> code;
  bool operator==(const MastermindParams&) const = default;
};
struct ChebyshevParams {
  std::vector<double> alpha;
  bool operator==(const ChebyshevParams&) const = default;
};
struct HmmParams {
  HmmLatent latent;
  bool operator==(const HmmParams&) const = default;
};

using TaskParams =
    std::variant<LinearParams, SinusoidParams, MastermindParams, ChebyshevParams, HmmParams>;

struct Episode {
  std::vector<DataPoint> points;
  TaskParams params;
  TaskSpec spec;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t size() const { return points.size(); }
  // First n points, same params and seed.
  [[nodiscard]] Episode truncated(std::size_t n) const;
};

enum class Split { train, eval };

struct MetaDataset {
  std::vector<Episode> episodes;
  TaskSpec spec;
  Split split = Split::train;
};

LinearParams sample_linear_task(const TaskSpec& spec, Rng& rng);
double eval_linear(const LinearParams& params, std::span<const double> x, double noise);

std::vector<double> sample_shared_frequencies(int count, Rng& rng);
double eval_sinusoid(std::span<const double> alpha, std::span<const double> freqs, double x);
// Multi-dimensional inputs: term l uses frequency vector freqs[l*d .. (l+1)*d).
double eval_sinusoid(std::span<const double> alpha, std::span<const double> freqs,
                     std::span<const double> x);

std::vector<int> sample_mastermind_code(int length, int alphabet, Rng& rng);

struct MastermindResponse {
  int exact = 0;   // right digit, right position
  int common = 0;  // multiset overlap, positional matches included
  bool operator==(const MastermindResponse&) const = default;
};
MastermindResponse mastermind_response(std::span<const int> code, std::span<const int> guess);

double chebyshev_value(int n, double x);
double eval_chebyshev(std::span<const double> alpha, double x, double noise);

TaskParams sample_task_params(const TaskSpec& spec, Rng& rng);
Episode make_episode(const TaskSpec& spec, const TaskParams& params, int n_points, Rng& rng);

// Sinusoid specs get their shared frequencies here when they have none yet.
TaskSpec finalize_spec(TaskSpec spec, std::uint64_t seed);

// Task seeds derive from (seed, split, index); the two splits never share one.
// HMM families draw latents from the split's side of the world's partition.
MetaDataset make_meta_dataset(const TaskSpec& spec, int n_tasks, int n_points, std::uint64_t seed,
                              Split split, const HmmWorld* world = nullptr);

struct MetaDatasetPair {
  MetaDataset train;
  MetaDataset eval;
  std::optional<HmmWorld> world;
};
MetaDatasetPair make_meta_datasets(const TaskSpec& spec, int n_train, int n_eval,
                                   int train_points, int eval_points, std::uint64_t seed);

Episode hmm_episode(const ObservationSequence& seq, const HmmHyper& hyper);
// (x_i = i, y_i = token_i) with i starting at 1.
Episode hmm_to_supervised(const ObservationSequence& seq, const HmmHyper& hyper);

}  // namespace preq
