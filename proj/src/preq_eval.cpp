#include "preq/preq_eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace preq {

std::string_view to_string(EvalMode m) {
  return m == EvalMode::next_point ? "next_point" : "held_out_tail";
}

EvalMode eval_mode_from_string(std::string_view s) {
  if (s == "next_point") return EvalMode::next_point;
  if (s == "held_out_tail") return EvalMode::held_out_tail;
  throw std::invalid_argument("unknown eval mode: " + std::string(s));
}

void PrequentialCurve::validate() const {
  const std::size_t n = context_sizes.size();
  if (mean_error.size() != n || stderr_.size() != n) {
    throw std::invalid_argument("PrequentialCurve: column lengths differ");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (context_sizes[i] <= context_sizes[i - 1]) {
      throw std::invalid_argument("PrequentialCurve: grid must be strictly increasing");
    }
  }
  for (double s : stderr_) {
    if (!(s >= 0.0)) throw std::invalid_argument("PrequentialCurve: negative standard error");
  }
  for (const auto& row : per_seed) {
    if (row.size() != n) throw std::invalid_argument("PrequentialCurve: per-seed row length");
  }
}

std::vector<int> default_grid(int max_context) {
  std::vector<int> g;
  for (int t = 0; t <= std::min(16, max_context); ++t) g.push_back(t);
  double x = 16;
  while (true) {
    x *= 1.5;
    const int t = static_cast<int>(std::lround(x));
    if (t >= max_context) break;
    g.push_back(t);
  }
  if (g.back() != max_context) g.push_back(max_context);
  return g;
}

namespace {

void check_grid(std::span<const int> grid) {
  if (grid.empty()) throw std::invalid_argument("eval: empty context grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0) throw std::invalid_argument("eval: negative context size");
    if (i > 0 && grid[i] <= grid[i - 1]) throw std::invalid_argument("eval: grid must increase");
  }
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stderr_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

std::vector<std::vector<double>> eval_errors(const Predictor& predictor, const MetaDataset& tasks,
                                             std::span<const int> grid, const EvalOptions& opts) {
  check_grid(grid);
  if (tasks.split != Split::eval) {
    throw std::invalid_argument("eval: tasks must come from the eval split");
  }
  if (opts.mode == EvalMode::held_out_tail && opts.n_query < 1) {
    throw std::invalid_argument("eval: n_query must be >= 1");
  }
  const ErrorKind kind = error_kind_for(tasks.spec);
  const std::size_t n_eps = tasks.episodes.size();
  std::vector<std::vector<double>> errors(n_eps, std::vector<double>(grid.size()));
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (opts.parallel)
  for (std::size_t e = 0; e < n_eps; ++e) {
    try {
      const Episode& ep = tasks.episodes[e];
      const auto n = static_cast<int>(ep.size());
      std::vector<Query> queries;
      if (opts.mode == EvalMode::next_point) {
        if (grid.back() > n - 1) {
          throw std::out_of_range("eval: context " + std::to_string(grid.back()) +
                                  " needs more than " + std::to_string(n) + " points");
        }
        for (int t : grid) queries.push_back({static_cast<std::size_t>(t), static_cast<std::size_t>(t)});
      } else {
        const int first_tail = n - opts.n_query;
        if (first_tail < 0 || grid.back() > first_tail) {
          throw std::out_of_range("eval: context " + std::to_string(grid.back()) + " plus " +
                                  std::to_string(opts.n_query) + " held-out points exceeds " +
                                  std::to_string(n) + " points");
        }
        for (int t : grid) {
          for (int j = 0; j < opts.n_query; ++j) {
            queries.push_back({static_cast<std::size_t>(t), static_cast<std::size_t>(first_tail + j)});
          }
        }
      }
      const auto preds = predictor.predict(ep, queries);
      const std::size_t per = opts.mode == EvalMode::next_point ? 1 : static_cast<std::size_t>(opts.n_query);
      for (std::size_t g = 0; g < grid.size(); ++g) {
        double s = 0.0;
        for (std::size_t j = 0; j < per; ++j) {
          const Query& q = queries[g * per + j];
          s += prediction_loss(preds[g * per + j], ep.points[q.index], kind);
        }
        errors[e][g] = s / static_cast<double>(per);
      }
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return errors;
}

PrequentialCurve eval_curve(const Predictor& predictor, const MetaDataset& tasks,
                            std::span<const int> grid, const EvalOptions& opts,
                            std::uint64_t seed) {
  const auto errors = eval_errors(predictor, tasks, grid, opts);
  if (errors.empty()) throw std::invalid_argument("eval: no episodes");
  PrequentialCurve c;
  c.context_sizes.assign(grid.begin(), grid.end());
  c.error_kind = error_kind_for(tasks.spec);
  c.learner = predictor.name();
  c.family = std::string(to_string(tasks.spec.family));
  c.seeds = {seed};
  std::vector<double> column(errors.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t e = 0; e < errors.size(); ++e) column[e] = errors[e][g];
    c.mean_error.push_back(mean_of(column));
    c.stderr_.push_back(stderr_of(column));
  }
  c.per_seed = {c.mean_error};
  return c;
}

PrequentialCurve combine_seeds(std::span<const PrequentialCurve> curves) {
  if (curves.empty()) throw std::invalid_argument("combine_seeds: no curves");
  if (curves.size() == 1) return curves[0];
  PrequentialCurve out;
  out.context_sizes = curves[0].context_sizes;
  out.error_kind = curves[0].error_kind;
  out.learner = curves[0].learner;
  out.family = curves[0].family;
  for (const auto& c : curves) {
    if (c.context_sizes != out.context_sizes || c.error_kind != out.error_kind) {
      throw std::invalid_argument("combine_seeds: curves use different grids or error kinds");
    }
    for (const auto& row : c.per_seed) out.per_seed.push_back(row);
    out.seeds.insert(out.seeds.end(), c.seeds.begin(), c.seeds.end());
  }
  std::vector<double> column(out.per_seed.size());
  for (std::size_t g = 0; g < out.context_sizes.size(); ++g) {
    for (std::size_t s = 0; s < out.per_seed.size(); ++s) column[s] = out.per_seed[s][g];
    out.mean_error.push_back(mean_of(column));
    out.stderr_.push_back(stderr_of(column));
  }
  return out;
}

PrequentialCurve gap_curve(const PrequentialCurve& a, const PrequentialCurve& b) {
  if (a.context_sizes != b.context_sizes) throw std::invalid_argument("gap_curve: grids differ");
  if (a.error_kind != b.error_kind) throw std::invalid_argument("gap_curve: error kinds differ");
  PrequentialCurve out;
  out.context_sizes = a.context_sizes;
  out.error_kind = a.error_kind;
  out.learner = a.learner + "-" + b.learner;
  out.family = a.family;
  for (std::size_t i = 0; i < a.context_sizes.size(); ++i) {
    out.mean_error.push_back(a.mean_error[i] - b.mean_error[i]);
    out.stderr_.push_back(std::hypot(a.stderr_[i], b.stderr_[i]));
  }
  if (a.per_seed.size() == b.per_seed.size()) {
    for (std::size_t s = 0; s < a.per_seed.size(); ++s) {
      std::vector<double> row(a.context_sizes.size());
      for (std::size_t i = 0; i < row.size(); ++i) row[i] = a.per_seed[s][i] - b.per_seed[s][i];
      out.per_seed.push_back(std::move(row));
    }
    out.seeds = a.seeds;
  }
  return out;
}

double gaussian_bits_constant() {
  return 0.5 * std::log2(2.0 * std::numbers::pi * std::numbers::e);
}

CodeLengthReport code_length(std::span<const double> nll, ErrorKind kind, int dims) {
  if (dims < 1) throw std::invalid_argument("code_length: dims must be >= 1");
  CodeLengthReport r;
  r.per_position_bits.reserve(nll.size());
  for (std::size_t i = 0; i < nll.size(); ++i) {
    const double v = nll[i];
    if (!std::isfinite(v)) {
      throw std::invalid_argument("code_length: non-finite entry at position " + std::to_string(i + 1));
    }
    if (v < 0.0) {
      throw std::invalid_argument(kind == ErrorKind::cross_entropy
                                      ? "code_length: negative log-loss (probability above one)"
                                      : "code_length: negative squared error");
    }
    double bits = 0.0;
    if (kind == ErrorKind::cross_entropy) {
      bits = v / std::numbers::ln2;
    } else {
      // -log2 N(y; mu, 1) summed over dims, written around the unit-error entropy.
      bits = dims * gaussian_bits_constant() + dims * (v - 1.0) / (2.0 * std::numbers::ln2);
    }
    r.per_position_bits.push_back(bits);
    r.total_bits += bits;
  }
  if (kind == ErrorKind::mse) {
    std::ostringstream note;
    note.precision(6);
    note << "continuous outputs coded under a unit-variance Gaussian: bits = d * "
         << gaussian_bits_constant() << " + d * (mse - 1) / (2 ln 2), d = " << dims
         << "; additive constant 1/2 log2(2 pi e) per dimension";
    r.overhead_note = note.str();
  } else {
    r.overhead_note = "categorical outputs: bits = nats / ln 2";
  }
  return r;
}

CodeLengthReport code_length_from_probs(std::span<const double> observed_probs) {
  std::vector<double> nll;
  nll.reserve(observed_probs.size());
  for (double p : observed_probs) {
    if (p < 0.0) throw std::invalid_argument("code_length: negative probability");
    if (p > 1.0 + 1e-12) throw std::invalid_argument("code_length: probability above one");
    nll.push_back(-std::log(std::min(p, 1.0)));
  }
  return code_length(nll, ErrorKind::cross_entropy);
}

Prediction marginal_baseline(std::span<const DataPoint> context, int n_labels, int n_classes) {
  if (n_labels < 1 || n_classes < 1) throw std::invalid_argument("marginal_baseline: empty label space");
  Prediction p;
  for (int l = 0; l < n_labels; ++l) {
    std::vector<double> counts(static_cast<std::size_t>(n_classes), 1.0);
    for (const DataPoint& d : context) {
      const int c = d.labels.at(static_cast<std::size_t>(l));
      if (c < 0 || c >= n_classes) throw std::out_of_range("marginal_baseline: label out of range");
      counts[static_cast<std::size_t>(c)] += 1.0;
    }
    const double z = static_cast<double>(context.size()) + n_classes;
    for (double& v : counts) v /= z;
    p.probs.push_back(std::move(counts));
  }
  return p;
}

std::vector<Prediction> MarginalPredictor::predict(const Episode& episode,
                                                   std::span<const Query> queries) const {
  std::vector<Prediction> out;
  out.reserve(queries.size());
  for (const Query& q : queries) {
    if (q.context > episode.size()) throw std::out_of_range("marginal: context beyond episode");
    out.push_back(marginal_baseline(std::span<const DataPoint>(episode.points.data(), q.context),
                                    n_labels_, n_classes_));
  }
  return out;
}

}  // namespace preq
