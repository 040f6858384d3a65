#include "preq/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace preq {

std::string_view to_string(ErrorKind k) {
  return k == ErrorKind::mse ? "mse" : "cross_entropy";
}

ErrorKind error_kind_from_string(std::string_view s) {
  if (s == "mse") return ErrorKind::mse;
  if (s == "cross_entropy") return ErrorKind::cross_entropy;
  throw std::invalid_argument("unknown error kind: " + std::string(s));
}

ErrorKind error_kind_for(const TaskSpec& spec) {
  return io_shape(spec).categorical() ? ErrorKind::cross_entropy : ErrorKind::mse;
}

double prediction_loss(const Prediction& pred, const DataPoint& target, ErrorKind kind) {
  if (kind == ErrorKind::mse) {
    if (pred.mean.size() != target.y.size() || pred.mean.empty()) {
      throw std::invalid_argument("prediction_loss: output dimension mismatch");
    }
    double s = 0.0;
    for (std::size_t d = 0; d < pred.mean.size(); ++d) {
      const double e = pred.mean[d] - target.y[d];
      s += e * e;
    }
    return s / static_cast<double>(pred.mean.size());
  }
  if (pred.probs.size() != target.labels.size()) {
    throw std::invalid_argument("prediction_loss: label count mismatch");
  }
  double nll = 0.0;
  for (std::size_t l = 0; l < pred.probs.size(); ++l) {
    const int c = target.labels[l];
    if (c < 0 || c >= static_cast<int>(pred.probs[l].size())) {
      throw std::out_of_range("prediction_loss: label out of range");
    }
    nll -= std::log(pred.probs[l][static_cast<std::size_t>(c)]);
  }
  return nll;
}

Prediction to_prediction(const LearnerConfig& config, std::span<const double> row) {
  Prediction p;
  if (config.output_kind != OutputKind::categorical_multi) {
    p.mean.assign(row.begin(), row.end());
    return p;
  }
  const int k = config.n_classes;
  for (int l = 0; l < config.n_labels; ++l) {
    auto logits = row.subspan(static_cast<std::size_t>(l * k), static_cast<std::size_t>(k));
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(static_cast<std::size_t>(k));
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += probs[static_cast<std::size_t>(c)] = std::exp(logits[static_cast<std::size_t>(c)] - mx);
    for (double& v : probs) v /= z;
    p.probs.push_back(std::move(probs));
  }
  return p;
}

LearnerPredictor::LearnerPredictor(std::shared_ptr<const SequenceLearner<float>> learner,
                                   std::string name)
    : learner_(std::move(learner)), name_(std::move(name)) {
  if (!learner_) throw std::invalid_argument("LearnerPredictor: null learner");
}

std::vector<Prediction> LearnerPredictor::predict(const Episode& episode,
                                                  std::span<const Query> queries) const {
  ad::Tape<float> tape(false);
  auto p = learner_->bind(tape);
  ad::Var out = learner_->outputs(tape, p, episode, queries);
  const int cols = tape.cols(out);
  auto val = tape.value(out);
  std::vector<double> row(static_cast<std::size_t>(cols));
  std::vector<Prediction> preds;
  preds.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (int c = 0; c < cols; ++c) {
      row[static_cast<std::size_t>(c)] = val[i * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    }
    preds.push_back(to_prediction(learner_->config(), row));
  }
  return preds;
}

}  // namespace preq

namespace preq {

std::optional<std::vector<double>> LearnerPredictor::coefficients(const Episode& episode,
                                                                  std::size_t context) const {
  const LearnerConfig& cfg = learner_->config();
  if (cfg.output_kind != OutputKind::chebyshev || cfg.arch == Arch::dual_stream) return std::nullopt;
  if (context > episode.size()) throw std::out_of_range("coefficients: context beyond the episode");
  ad::Tape<float> tape(false);
  auto p = learner_->bind(tape);
  ad::Var states = learner_->context_states(tape, p, encode_tokens(episode, cfg, context));
  const auto cols = static_cast<std::size_t>(tape.cols(states));
  auto val = tape.value(states);
  std::vector<double> out(cols);
  for (std::size_t c = 0; c < cols; ++c) out[c] = val[context * cols + c];
  return out;
}

DataPoint noiseless_point(const Episode& episode, std::span<const double> x) {
  DataPoint p;
  p.x.assign(x.begin(), x.end());
  std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, LinearParams>) {
          p.y = {eval_linear(v, x, 0.0)};
        } else if constexpr (std::is_same_v<V, SinusoidParams>) {
          p.y = {eval_sinusoid(v.alpha, episode.spec.shared_freqs, x)};
        } else if constexpr (std::is_same_v<V, ChebyshevParams>) {
          if (x.size() != 1) throw std::invalid_argument("noiseless_point: chebyshev input is 1-D");
          p.y = {eval_chebyshev(v.alpha, x[0], 0.0)};
        } else if constexpr (std::is_same_v<V, MastermindParams>) {
          std::vector<int> guess(x.size());
          for (std::size_t i = 0; i < x.size(); ++i) guess[i] = static_cast<int>(std::lround(x[i]));
          const MastermindResponse r = mastermind_response(v.code, guess);
          p.labels = {r.exact, r.common};
        } else {
          throw std::invalid_argument("noiseless_point: hidden Markov tasks have no noise-free target");
        }
      },
      episode.params);
  return p;
}

std::vector<Prediction> OraclePredictor::predict(const Episode& episode,
                                                 std::span<const Query> queries) const {
  const IoShape io = io_shape(episode.spec);
  std::vector<Prediction> preds;
  preds.reserve(queries.size());
  for (const Query& q : queries) {
    const DataPoint t = noiseless_point(episode, episode.points.at(q.index).x);
    Prediction pr;
    if (io.categorical()) {
      for (int l : t.labels) {
        std::vector<double> probs(static_cast<std::size_t>(io.n_classes), 0.0);
        probs.at(static_cast<std::size_t>(l)) = 1.0;
        pr.probs.push_back(std::move(probs));
      }
    } else {
      pr.mean = t.y;
    }
    preds.push_back(std::move(pr));
  }
  return preds;
}

std::optional<std::vector<double>> OraclePredictor::coefficients(const Episode& episode,
                                                                 std::size_t) const {
  const auto* cheb = std::get_if<ChebyshevParams>(&episode.params);
  if (cheb == nullptr) return std::nullopt;
  std::vector<double> out(static_cast<std::size_t>(episode.spec.basis_size), 0.0);
  std::copy_n(cheb->alpha.begin(), std::min(cheb->alpha.size(), out.size()), out.begin());
  return out;
}

}  // namespace preq
