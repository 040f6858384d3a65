#pragma once

// Non-meta-learned baseline: a fresh ReLU MLP fitted by Adam to each context
// prefix, optionally with early stopping and an L2 penalty.

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "preq/learners.hpp"
#include "preq/preq_eval.hpp"
#include "preq/tasks.hpp"

namespace preq {

struct BaselineConfig {
  int depth = 5;
  int width = 64;
  double learning_rate = 1e-4;
  int batch_size = 64;
  int max_epochs = 1000;
  bool early_stopping = true;
  double early_stop_delta = 0.001;
  int early_stop_patience = 10;
  double weight_decay = 0.0;  // lambda in lambda * ||W||^2, weight matrices only
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const BaselineConfig&) const = default;
};

// Stops once `patience` consecutive observations fail to beat the best by `delta`.
class EarlyStopper {
 public:
  EarlyStopper(double delta, int patience) : delta_(delta), patience_(patience) {}
  // Returns true when training should stop.
  bool observe(double loss);
  [[nodiscard]] int waited() const { return wait_; }
  [[nodiscard]] double best() const { return best_; }

 private:
  double delta_;
  int patience_;
  int wait_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct FittedMlp {
  LearnerConfig io;  // featurization and output shape
  BaselineConfig config;
  ParamSet<float> params;
  int epochs_used = 0;
  double train_loss = 0.0;     // unregularized, at the returned weights
  double objective = 0.0;      // train_loss + lambda ||W||^2
  std::vector<double> monitor_trace;  // loss watched by early stopping, per epoch

  [[nodiscard]] Prediction predict(std::span<const double> x) const;
  [[nodiscard]] double weight_norm2() const;
};

FittedMlp fit_mlp(std::span<const DataPoint> train_points, const TaskSpec& spec,
                  const BaselineConfig& config);

// For each size s and episode: fit on the first s points, score the last
// `n_eval` points (never fitted). Episodes need max(size) + n_eval points.
PrequentialCurve prequential_curve_sgd(const MetaDataset& tasks, std::span<const int> sizes,
                                       const BaselineConfig& config, int n_eval);

}  // namespace preq
