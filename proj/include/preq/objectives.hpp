#pragma once

// Meta-objectives over episodes and the meta-training loop.
//
//   prequential  predict d_t from D_{1:t-1}, t = 1..N
//   train_risk   for each prefix D_{1:t}, predict a uniformly drawn earlier point
//   suffix_only  prequential, summed only over t > ceil(N (1 - fraction))

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "preq/learners.hpp"
#include "preq/predictor.hpp"
#include "preq/rng.hpp"
#include "preq/tasks.hpp"

namespace preq {

enum class ObjectiveKind { prequential, train_risk, suffix_only };

std::string_view to_string(ObjectiveKind k);
ObjectiveKind objective_kind_from_string(std::string_view s);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::prequential;
  ErrorKind loss = ErrorKind::mse;
  double suffix_fraction = 0.5;

  void validate(const TaskSpec* task = nullptr) const;
  bool operator==(const ObjectiveSpec&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 256;
  int epochs = 50;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  bool parallel = true;    // episodes within a batch evaluated concurrently

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Query plans. Indices are 0-based; Query::context counts observed points.
std::vector<Query> prequential_queries(std::size_t n);
std::vector<Query> train_risk_queries(std::size_t n, Rng& rng);
std::vector<Query> suffix_queries(std::size_t n, double fraction);
std::vector<Query> objective_queries(const ObjectiveSpec& spec, std::size_t n, Rng& rng);

// First 1-based position that suffix_only sums over.
std::size_t suffix_start(std::size_t n, double fraction);

// Per-query losses from one batched forward pass. Throws on a non-finite entry,
// naming its position.
template <class T>
std::vector<double> query_losses(const SequenceLearner<T>& learner, const Episode& episode,
                                 std::span<const Query> queries);

template <class T>
double prequential_loss(const SequenceLearner<T>& learner, const Episode& episode,
                        const ObjectiveSpec& spec);
template <class T>
double train_risk_loss(const SequenceLearner<T>& learner, const Episode& episode, Rng& rng,
                       const ObjectiveSpec& spec);
template <class T>
double suffix_loss(const SequenceLearner<T>& learner, const Episode& episode,
                   const ObjectiveSpec& spec);

// Loss and flat gradient (ParamSet order) of the summed per-query loss.
template <class T>
T episode_gradient(const SequenceLearner<T>& learner, const Episode& episode,
                   std::span<const Query> queries, std::span<T> grad_out);

class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1, double beta2, double eps);
  void step(std::span<float> params, std::span<const float> grad);
  [[nodiscard]] long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;  // mean over episodes of the summed per-position loss
  double seconds = 0.0;
};

struct TrainResult {
  SequenceLearner<float> learner;
  std::vector<EpochStats> trace;
  std::vector<double> step_losses;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::vector<EpochStats> trace,
                  std::vector<double> step_losses)
      : std::runtime_error(what), trace(std::move(trace)), step_losses(std::move(step_losses)) {}
  std::vector<EpochStats> trace;
  std::vector<double> step_losses;
};

using EpochCallback = std::function<void(const EpochStats&)>;

TrainResult meta_train(SequenceLearner<float> init, const MetaDataset& data,
                       const ObjectiveSpec& objective, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});
// Initialization drawn from config.seed.
TrainResult meta_train(const LearnerConfig& learner, const MetaDataset& data,
                       const ObjectiveSpec& objective, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

}  // namespace preq
