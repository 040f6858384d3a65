#include "preq/objectives.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>

#include "preq/kernels.hpp"

namespace preq {

std::string_view to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::prequential: return "prequential";
    case ObjectiveKind::train_risk: return "train_risk";
    case ObjectiveKind::suffix_only: return "suffix_only";
  }
  return "?";
}

ObjectiveKind objective_kind_from_string(std::string_view s) {
  for (auto k : {ObjectiveKind::prequential, ObjectiveKind::train_risk, ObjectiveKind::suffix_only}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown objective: " + std::string(s));
}

void ObjectiveSpec::validate(const TaskSpec* task) const {
  if (!(suffix_fraction > 0.0 && suffix_fraction <= 1.0)) {
    throw std::invalid_argument("ObjectiveSpec: suffix_fraction must be in (0, 1]");
  }
  if (task != nullptr && error_kind_for(*task) != loss) {
    throw std::invalid_argument("ObjectiveSpec: loss " + std::string(to_string(loss)) +
                                " does not fit the " + std::string(to_string(task->family)) +
                                " family");
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (grad_clip < 0.0) throw std::invalid_argument("TrainConfig: grad_clip must be >= 0");
}

std::vector<Query> prequential_queries(std::size_t n) {
  std::vector<Query> q(n);
  for (std::size_t t = 0; t < n; ++t) q[t] = {t, t};
  return q;
}

std::vector<Query> train_risk_queries(std::size_t n, Rng& rng) {
  std::vector<Query> q(n);
  for (std::size_t t = 1; t <= n; ++t) {
    const auto pick = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(t) - 1));
    q[t - 1] = {t, pick};
  }
  return q;
}

std::size_t suffix_start(std::size_t n, double fraction) {
  const double cut = static_cast<double>(n) * (1.0 - fraction);
  return static_cast<std::size_t>(std::ceil(cut - 1e-9)) + 1;
}

std::vector<Query> suffix_queries(std::size_t n, double fraction) {
  std::vector<Query> q;
  for (std::size_t t = suffix_start(n, fraction); t <= n; ++t) q.push_back({t - 1, t - 1});
  return q;
}

std::vector<Query> objective_queries(const ObjectiveSpec& spec, std::size_t n, Rng& rng) {
  switch (spec.kind) {
    case ObjectiveKind::prequential: return prequential_queries(n);
    case ObjectiveKind::train_risk: return train_risk_queries(n, rng);
    case ObjectiveKind::suffix_only: return suffix_queries(n, spec.suffix_fraction);
  }
  return {};
}

template <class T>
std::vector<double> query_losses(const SequenceLearner<T>& learner, const Episode& episode,
                                 std::span<const Query> queries) {
  if (queries.empty()) return {};
  ad::Tape<T> tape(false);
  auto p = learner.bind(tape);
  ad::Var out = learner.outputs(tape, p, episode, queries);
  const auto cols = static_cast<std::size_t>(tape.cols(out));
  auto val = tape.value(out);
  const ErrorKind kind = learner.config().output_kind == OutputKind::categorical_multi
                             ? ErrorKind::cross_entropy
                             : ErrorKind::mse;
  std::vector<double> row(cols);
  std::vector<double> losses;
  losses.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (std::size_t c = 0; c < cols; ++c) row[c] = static_cast<double>(val[i * cols + c]);
    const double l =
        prediction_loss(to_prediction(learner.config(), row), episode.points[queries[i].index], kind);
    if (!std::isfinite(l)) {
      throw std::runtime_error("non-finite loss at position " + std::to_string(queries[i].index + 1));
    }
    losses.push_back(l);
  }
  return losses;
}

namespace {

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

void require_length(const Episode& e, std::size_t n, const char* who) {
  if (e.size() < n) {
    throw std::invalid_argument(std::string(who) + ": episode needs at least " + std::to_string(n) +
                                " points");
  }
}

}  // namespace

template <class T>
double prequential_loss(const SequenceLearner<T>& learner, const Episode& episode,
                        const ObjectiveSpec&) {
  require_length(episode, 1, "prequential_loss");
  const auto q = prequential_queries(episode.size());
  return total(query_losses(learner, episode, q));
}

template <class T>
double train_risk_loss(const SequenceLearner<T>& learner, const Episode& episode, Rng& rng,
                       const ObjectiveSpec&) {
  require_length(episode, 2, "train_risk_loss");
  const auto q = train_risk_queries(episode.size(), rng);
  return total(query_losses(learner, episode, q));
}

template <class T>
double suffix_loss(const SequenceLearner<T>& learner, const Episode& episode,
                   const ObjectiveSpec& spec) {
  require_length(episode, 2, "suffix_loss");
  spec.validate();
  const auto q = suffix_queries(episode.size(), spec.suffix_fraction);
  return total(query_losses(learner, episode, q));
}

template <class T>
T episode_gradient(const SequenceLearner<T>& learner, const Episode& episode,
                   std::span<const Query> queries, std::span<T> grad_out) {
  const auto& ps = learner.params();
  if (grad_out.size() != ps.total_size()) throw std::invalid_argument("episode_gradient: bad buffer");
  ad::Tape<T> tape(true);
  auto p = learner.bind(tape);
  ad::Var out = learner.outputs(tape, p, episode, queries);
  ad::Var loss = learner.loss(tape, out, episode, queries);
  tape.backward(loss);
  std::size_t off = 0;
  for (std::size_t i = 0; i < ps.count(); ++i) {
    auto g = tape.grad(p.vars[i]);
    const std::size_t len = ps[i].data.size();
    if (g.empty()) {
      std::fill_n(grad_out.begin() + static_cast<std::ptrdiff_t>(off), len, T(0));
    } else {
      std::copy(g.begin(), g.end(), grad_out.begin() + static_cast<std::ptrdiff_t>(off));
    }
    off += len;
  }
  return tape.scalar(loss);
}

#define PREQ_INSTANTIATE(T)                                                                       \
  template std::vector<double> query_losses<T>(const SequenceLearner<T>&, const Episode&,         \
                                               std::span<const Query>);                           \
  template double prequential_loss<T>(const SequenceLearner<T>&, const Episode&,                  \
                                      const ObjectiveSpec&);                                      \
  template double train_risk_loss<T>(const SequenceLearner<T>&, const Episode&, Rng&,             \
                                     const ObjectiveSpec&);                                       \
  template double suffix_loss<T>(const SequenceLearner<T>&, const Episode&, const ObjectiveSpec&); \
  template T episode_gradient<T>(const SequenceLearner<T>&, const Episode&, std::span<const Query>, \
                                 std::span<T>);
PREQ_INSTANTIATE(float)
PREQ_INSTANTIATE(double)
#undef PREQ_INSTANTIATE

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<float> params, std::span<const float> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("Adam: size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const double g = grad[i];
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] = static_cast<float>(params[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
  }
}

TrainResult meta_train(SequenceLearner<float> init, const MetaDataset& data,
                       const ObjectiveSpec& objective, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  objective.validate(&data.spec);
  if (data.split != Split::train) throw std::invalid_argument("meta_train: dataset is not a train split");
  if (data.episodes.empty()) throw std::invalid_argument("meta_train: empty meta-dataset");

  TrainResult result{std::move(init), {}, {}};
  SequenceLearner<float>& learner = result.learner;
  const std::size_t n_params = learner.params().total_size();
  std::vector<float> flat = learner.params().flatten();
  Adam adam(n_params, config.learning_rate, config.beta1, config.beta2, config.adam_eps);

  const std::size_t n_eps = data.episodes.size();
  const auto batch = static_cast<std::size_t>(std::min<std::size_t>(config.batch_size, n_eps));
  std::vector<std::vector<float>> grads(batch, std::vector<float>(n_params));
  std::vector<double> losses(batch);
  std::vector<float> summed(n_params);
  std::vector<std::size_t> order(n_eps);
  const auto exec = config.parallel ? kernels::Exec::parallel : kernels::Exec::serial;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, seed_tag::batching, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::uint64_t query_seed =
        derive_seed(config.seed, seed_tag::queries, static_cast<std::uint64_t>(epoch));

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_eps; start += batch) {
      const std::size_t count = std::min(batch, n_eps - start);
      std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (config.parallel)
      for (std::size_t b = 0; b < count; ++b) {
        try {
          const std::size_t ep = order[start + b];
          const Episode& episode = data.episodes[ep];
          Rng qrng(derive_seed(query_seed, ep));
          const auto queries = objective_queries(objective, episode.size(), qrng);
          losses[b] = episode_gradient(learner, episode, queries, std::span<float>(grads[b]));
        } catch (...) {
#pragma omp critical
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);

      double step_loss = 0.0;
      for (std::size_t b = 0; b < count; ++b) step_loss += losses[b];
      step_loss /= static_cast<double>(count);
      result.step_losses.push_back(step_loss);
      if (!std::isfinite(step_loss)) {
        throw DivergenceError("meta_train: non-finite loss in epoch " + std::to_string(epoch),
                              result.trace, result.step_losses);
      }
      epoch_loss += step_loss * static_cast<double>(count);

      std::vector<const float*> parts(count);
      for (std::size_t b = 0; b < count; ++b) parts[b] = grads[b].data();
      std::fill(summed.begin(), summed.end(), 0.0f);
      kernels::ordered_sum(exec, std::span<const float* const>(parts), n_params, summed.data());
      const float inv = 1.0f / static_cast<float>(count);
      double norm2 = 0.0;
      for (float& g : summed) {
        g *= inv;
        norm2 += static_cast<double>(g) * g;
      }
      if (config.grad_clip > 0.0 && std::sqrt(norm2) > config.grad_clip) {
        const auto s = static_cast<float>(config.grad_clip / std::sqrt(norm2));
        for (float& g : summed) g *= s;
      }
      adam.step(flat, summed);
      learner.params().assign_flat(flat);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = epoch_loss / static_cast<double>(n_eps);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

TrainResult meta_train(const LearnerConfig& learner, const MetaDataset& data,
                       const ObjectiveSpec& objective, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  return meta_train(SequenceLearner<float>(learner, config.seed), data, objective, config, on_epoch);
}

}  // namespace preq
