#pragma once

// Prequential coding curves on held-out tasks, code lengths in bits, the
// marginal-frequency baseline, and curve differencing.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "preq/predictor.hpp"
#include "preq/tasks.hpp"

namespace preq {

// next_point:     context D_{1:t}, query point t+1.
// held_out_tail:  the last n_query points of each episode are never observed;
//                 context D_{1:t}, error averaged over those tail points.
enum class EvalMode { next_point, held_out_tail };

std::string_view to_string(EvalMode m);
EvalMode eval_mode_from_string(std::string_view s);

struct EvalOptions {
  EvalMode mode = EvalMode::held_out_tail;
  int n_query = 16;
  bool parallel = true;
};

struct PrequentialCurve {
  std::vector<int> context_sizes;
  std::vector<double> mean_error;
  std::vector<double> stderr_;
  std::vector<std::vector<double>> per_seed;  // [seed][grid]
  std::vector<std::uint64_t> seeds;
  ErrorKind error_kind = ErrorKind::mse;
  std::string learner;
  std::string family;

  void validate() const;
};

// Dense 0..min(16, max) then roughly geometric (x1.5) up to max_context.
std::vector<int> default_grid(int max_context);

// Per-episode errors, [episode][grid].
std::vector<std::vector<double>> eval_errors(const Predictor& predictor, const MetaDataset& tasks,
                                             std::span<const int> grid, const EvalOptions& opts = {});

// One seed: mean over episodes, standard error across episodes.
PrequentialCurve eval_curve(const Predictor& predictor, const MetaDataset& tasks,
                            std::span<const int> grid, const EvalOptions& opts = {},
                            std::uint64_t seed = 0);

// Several seeds of one learner: mean of the per-seed curves, standard error across
// seeds (the episode-level error is kept when there is only one seed).
PrequentialCurve combine_seeds(std::span<const PrequentialCurve> curves);

// a - b with se = sqrt(se_a^2 + se_b^2).
PrequentialCurve gap_curve(const PrequentialCurve& a, const PrequentialCurve& b);

struct CodeLengthReport {
  double total_bits = 0.0;
  std::vector<double> per_position_bits;
  std::string overhead_note;
};

// 1/2 log2(2 pi e): bits per output dimension of a unit-variance Gaussian at unit error.
double gaussian_bits_constant();

// cross_entropy entries are nats; mse entries are squared errors averaged over
// `dims` output dimensions, coded under a unit-variance Gaussian.
CodeLengthReport code_length(std::span<const double> per_position_nll, ErrorKind kind, int dims = 1);
// From the probabilities assigned to the observed symbols.
CodeLengthReport code_length_from_probs(std::span<const double> observed_probs);

// Add-one smoothed label frequencies per label position; uniform for an empty context.
Prediction marginal_baseline(std::span<const DataPoint> context, int n_labels, int n_classes);

class MarginalPredictor : public Predictor {
 public:
  MarginalPredictor(int n_labels, int n_classes) : n_labels_(n_labels), n_classes_(n_classes) {}
  [[nodiscard]] std::vector<Prediction> predict(const Episode& episode,
                                                std::span<const Query> queries) const override;
  [[nodiscard]] std::string name() const override { return "marginal"; }

 private:
  int n_labels_;
  int n_classes_;
};

}  // namespace preq
