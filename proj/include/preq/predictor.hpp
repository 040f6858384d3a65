#pragma once

// Anything that turns (context prefix, query input) into a predictive
// distribution: meta-learned sequence models, the marginal baseline, oracles.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "preq/learners.hpp"
#include "preq/tasks.hpp"

namespace preq {

enum class ErrorKind { mse, cross_entropy };

std::string_view to_string(ErrorKind k);
ErrorKind error_kind_from_string(std::string_view s);
ErrorKind error_kind_for(const TaskSpec& spec);

// Gaussian predictions carry `mean`; categorical ones carry one probability
// vector per label position.
struct Prediction {
  std::vector<double> mean;
  std::vector<std::vector<double>> probs;
};

// Squared error averaged over output dimensions, or cross-entropy in nats summed
// over label positions.
double prediction_loss(const Prediction& pred, const DataPoint& target, ErrorKind kind);

class Predictor {
 public:
  virtual ~Predictor() = default;
  [[nodiscard]] virtual std::vector<Prediction> predict(const Episode& episode,
                                                        std::span<const Query> queries) const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
  // Chebyshev coefficients inferred from the first `context` points, for
  // predictors that have them.
  [[nodiscard]] virtual std::optional<std::vector<double>> coefficients(const Episode&,
                                                                      std::size_t) const {
    return std::nullopt;
  }
};

// Wraps a trained learner; evaluation runs on a non-recording tape.
class LearnerPredictor : public Predictor {
 public:
  LearnerPredictor(std::shared_ptr<const SequenceLearner<float>> learner, std::string name);
  [[nodiscard]] std::vector<Prediction> predict(const Episode& episode,
                                                std::span<const Query> queries) const override;
  [[nodiscard]] std::string name() const override { return name_; }
  [[nodiscard]] std::optional<std::vector<double>> coefficients(const Episode& episode,
                                                              std::size_t context) const override;
  [[nodiscard]] const SequenceLearner<float>& learner() const { return *learner_; }

 private:
  std::shared_ptr<const SequenceLearner<float>> learner_;
  std::string name_;
};

// Noise-free target of a regression or Mastermind task at input x.
DataPoint noiseless_point(const Episode& episode, std::span<const double> x);

// Predicts the noise-free target from the task parameters (ignores the context).
class OraclePredictor : public Predictor {
 public:
  [[nodiscard]] std::vector<Prediction> predict(const Episode& episode,
                                                std::span<const Query> queries) const override;
  [[nodiscard]] std::string name() const override { return "oracle"; }
  // The generating coefficients, zero-padded to the basis size.
  [[nodiscard]] std::optional<std::vector<double>> coefficients(const Episode& episode,
                                                              std::size_t context) const override;
};

// Raw output row -> prediction (softmax per label group for categorical outputs).
Prediction to_prediction(const LearnerConfig& config, std::span<const double> row);

}  // namespace preq
