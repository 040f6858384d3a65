#pragma once

// Reverse-mode gradients against central finite differences.

#include <cstdint>
#include <span>
#include <string>

#include "preq/learners.hpp"

namespace preq {

struct GradCheckResult {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "tensor[index]" of the largest error
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Samples `n_samples` weights uniformly over the flat parameter vector and
// compares d(sum of query losses)/dw with (L(w + eps) - L(w - eps)) / 2 eps.
// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const SequenceLearner<double>& learner, const Episode& episode,
                           std::span<const Query> queries, int n_samples, std::uint64_t seed,
                           double eps = 1e-6, double floor = 1e-4);

}  // namespace preq
