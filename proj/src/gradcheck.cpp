#include "preq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "preq/objectives.hpp"
#include "preq/rng.hpp"

namespace preq {

namespace {

double summed_loss(const SequenceLearner<double>& learner, const Episode& episode, std::span<const Query> queries) {
  const auto losses = query_losses(learner, episode, queries);
  return std::accumulate(losses.begin(), losses.end(), 0.0);
}

}  // namespace

GradCheckResult grad_check(const SequenceLearner<double>& learner, const Episode& episode,
                           std::span<const Query> queries, int n_samples, std::uint64_t seed, double eps,
                           double floor) {
  const std::size_t total = learner.params().total_size();
  std::vector<double> grad(total);
  episode_gradient(learner, episode, queries, std::span<double>(grad));

  Rng rng(seed);
  std::vector<std::size_t> picks(total);
  std::iota(picks.begin(), picks.end(), std::size_t{0});
  std::shuffle(picks.begin(), picks.end(), rng);
  picks.resize(std::min<std::size_t>(total, static_cast<std::size_t>(n_samples)));

  GradCheckResult r;
  SequenceLearner<double> probe = learner;
  for (std::size_t flat : picks) {
    std::size_t t = 0, off = flat;
    while (off >= probe.params()[t].data.size()) off -= probe.params()[t++].data.size();
    double& w = probe.params()[t].data[off];
    const double w0 = w;
    w = w0 + eps;
    const double up = summed_loss(probe, episode, queries);
    w = w0 - eps;
    const double down = summed_loss(probe, episode, queries);
    w = w0;
    const double numeric = (up - down) / (2 * eps);
    const double analytic = grad[flat];
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    ++r.checked;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst = probe.params()[t].name + "[" + std::to_string(off) + "]";
      r.worst_analytic = analytic;
      r.worst_numeric = numeric;
    }
  }
  return r;
}

}  // namespace preq
