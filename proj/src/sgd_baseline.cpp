#include "preq/sgd_baseline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <string>

#include "preq/objectives.hpp"
#include "preq/rng.hpp"

namespace preq {

void BaselineConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("BaselineConfig: " + m); };
  if (depth < 1 || width < 1) fail("depth and width must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_epochs < 0) fail("max_epochs must be >= 0");
  if (early_stop_patience < 1) fail("early_stop_patience must be >= 1");
  if (early_stop_delta < 0.0) fail("early_stop_delta must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail("val_fraction must be in (0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
}

bool EarlyStopper::observe(double loss) {
  if (loss < best_ - delta_) {
    best_ = loss;
    wait_ = 0;
    return false;
  }
  ++wait_;
  return wait_ >= patience_;
}

namespace {

std::string wname(int i) { return "w" + std::to_string(i); }
std::string bname(int i) { return "b" + std::to_string(i); }

ad::Var mlp_forward(ad::Tape<float>& tape, const std::vector<ad::Var>& p, int depth, ad::Var x) {
  ad::Var h = x;
  for (int i = 0; i < depth; ++i) {
    h = ad::linear(tape, h, p[static_cast<std::size_t>(2 * i)], p[static_cast<std::size_t>(2 * i + 1)]);
    if (i + 1 < depth) h = ad::relu(tape, h);
  }
  return h;
}

struct Batch {
  std::vector<float> x;
  std::vector<float> y;
  std::vector<int> labels;
  int rows = 0;
};

Batch make_batch(const LearnerConfig& io, std::span<const DataPoint> pts,
                 std::span<const std::size_t> idx) {
  Batch b;
  b.rows = static_cast<int>(idx.size());
  for (std::size_t i : idx) {
    const DataPoint& p = pts[i];
    for (double v : featurize_x(io, p.x)) b.x.push_back(static_cast<float>(v));
    for (double v : p.y) b.y.push_back(static_cast<float>(v));
    b.labels.insert(b.labels.end(), p.labels.begin(), p.labels.end());
  }
  return b;
}

std::vector<ad::Var> bind(ad::Tape<float>& tape, const ParamSet<float>& ps) {
  std::vector<ad::Var> vars;
  for (const auto& t : ps.tensors()) vars.push_back(tape.param(t.rows, t.cols, std::span<const float>(t.data)));
  return vars;
}

// Mean per-point loss (and the L2 term when lambda > 0) on a tape.
ad::Var batch_loss(ad::Tape<float>& tape, const std::vector<ad::Var>& p, const LearnerConfig& io,
                   int depth, const Batch& b, double lambda) {
  ad::Var x = tape.constant(b.rows, io.x_features(), b.x);
  ad::Var out = mlp_forward(tape, p, depth, x);
  ad::Var loss = io.output_kind == OutputKind::categorical_multi
                     ? ad::softmax_xent(tape, out, std::span<const int>(b.labels), io.n_labels,
                                        io.n_classes, std::span<const float>{})
                     : ad::mse_loss(tape, out, std::span<const float>(b.y), std::span<const float>{});
  loss = ad::scale(tape, loss, 1.0f / static_cast<float>(b.rows));
  if (lambda > 0.0) {
    for (int i = 0; i < depth; ++i) {
      ad::Var pen = ad::scale(tape, ad::sum_squares(tape, p[static_cast<std::size_t>(2 * i)]),
                              static_cast<float>(lambda));
      loss = ad::add(tape, loss, pen);
    }
  }
  return loss;
}

double eval_loss(const ParamSet<float>& ps, const LearnerConfig& io, int depth, const Batch& b) {
  ad::Tape<float> tape(false);
  auto p = bind(tape, ps);
  return static_cast<double>(tape.scalar(batch_loss(tape, p, io, depth, b, 0.0)));
}

}  // namespace

double FittedMlp::weight_norm2() const {
  double s = 0.0;
  for (int i = 0; i < config.depth; ++i) {
    for (float w : params[static_cast<std::size_t>(params.index(wname(i)))].data) s += static_cast<double>(w) * w;
  }
  return s;
}

Prediction FittedMlp::predict(std::span<const double> x) const {
  ad::Tape<float> tape(false);
  auto p = bind(tape, params);
  std::vector<float> fx;
  for (double v : featurize_x(io, x)) fx.push_back(static_cast<float>(v));
  ad::Var out = mlp_forward(tape, p, config.depth, tape.constant(1, io.x_features(), fx));
  auto val = tape.value(out);
  std::vector<double> row(val.begin(), val.end());
  return to_prediction(io, row);
}

FittedMlp fit_mlp(std::span<const DataPoint> points, const TaskSpec& spec,
                  const BaselineConfig& config) {
  config.validate();
  if (points.empty()) throw std::invalid_argument("fit_mlp: no training points");
  FittedMlp fit;
  fit.config = config;
  fit.io = configure_io(LearnerConfig{}, spec);
  const LearnerConfig& io = fit.io;
  if (io.x_features() < 1) throw std::invalid_argument("fit_mlp: task has no inputs");

  Rng rng(derive_seed(config.seed, seed_tag::init));
  int in = io.x_features();
  for (int i = 0; i < config.depth; ++i) {
    const bool last = i + 1 == config.depth;
    const int out = last ? io.output_width() : config.width;
    auto& w = fit.params[static_cast<std::size_t>(fit.params.add(wname(i), in, out))];
    const double sd = last ? 1.0 / std::sqrt(static_cast<double>(in)) : std::sqrt(2.0 / in);
    for (float& v : w.data) v = static_cast<float>(sd * standard_normal(rng));
    fit.params.add(bname(i), 1, out);
    in = out;
  }

  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> fit_idx = order;
  std::vector<std::size_t> val_idx;
  if (config.early_stopping && points.size() >= 5) {
    Rng split_rng(derive_seed(config.seed, seed_tag::train_split));
    std::shuffle(order.begin(), order.end(), split_rng);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(config.val_fraction * static_cast<double>(points.size()))));
    val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    fit_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  }
  const Batch fit_all = make_batch(io, points, fit_idx);
  const Batch val_all = val_idx.empty() ? Batch{} : make_batch(io, points, val_idx);

  std::vector<float> flat = fit.params.flatten();
  Adam adam(flat.size(), config.learning_rate, 0.9, 0.999, 1e-7);
  EarlyStopper stopper(config.early_stop_delta, config.early_stop_patience);
  Rng batch_rng(derive_seed(config.seed, seed_tag::batching));
  std::vector<float> grad(flat.size());
  std::vector<std::size_t> perm = fit_idx;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), batch_rng);
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(perm.size(), start + static_cast<std::size_t>(config.batch_size));
      const Batch b = make_batch(io, points, std::span<const std::size_t>(perm.data() + start, end - start));
      ad::Tape<float> tape(true);
      auto p = bind(tape, fit.params);
      ad::Var loss = batch_loss(tape, p, io, config.depth, b, config.weight_decay);
      tape.backward(loss);
      std::size_t off = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto g = tape.grad(p[i]);
        std::copy(g.begin(), g.end(), grad.begin() + static_cast<std::ptrdiff_t>(off));
        off += g.size();
      }
      adam.step(flat, grad);
      fit.params.assign_flat(flat);
    }
    fit.epochs_used = epoch + 1;
    if (config.early_stopping) {
      const double monitor = val_idx.empty() ? eval_loss(fit.params, io, config.depth, fit_all)
                                             : eval_loss(fit.params, io, config.depth, val_all);
      if (!std::isfinite(monitor)) {
        throw std::runtime_error("fit_mlp: diverged at epoch " + std::to_string(epoch + 1));
      }
      fit.monitor_trace.push_back(monitor);
      if (stopper.observe(monitor)) break;
    }
  }
  fit.train_loss = eval_loss(fit.params, io, config.depth, fit_all);
  fit.objective = fit.train_loss + config.weight_decay * fit.weight_norm2();
  return fit;
}

PrequentialCurve prequential_curve_sgd(const MetaDataset& tasks, std::span<const int> sizes,
                                       const BaselineConfig& config, int n_eval) {
  if (sizes.empty()) throw std::invalid_argument("prequential_curve_sgd: empty schedule");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1 || (i > 0 && sizes[i] <= sizes[i - 1])) {
      throw std::invalid_argument("prequential_curve_sgd: schedule must be strictly increasing and >= 1");
    }
  }
  if (n_eval < 1) throw std::invalid_argument("prequential_curve_sgd: n_eval must be >= 1");
  if (tasks.episodes.empty()) throw std::invalid_argument("prequential_curve_sgd: no tasks");
  const ErrorKind kind = error_kind_for(tasks.spec);
  const std::size_t n_eps = tasks.episodes.size();
  std::vector<std::vector<double>> errors(n_eps, std::vector<double>(sizes.size()));
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t e = 0; e < n_eps; ++e) {
    try {
      const Episode& ep = tasks.episodes[e];
      const std::size_t n = ep.size();
      if (static_cast<std::size_t>(sizes.back() + n_eval) > n) {
        throw std::out_of_range("prequential_curve_sgd: episode too short for the schedule");
      }
      const std::size_t tail = n - static_cast<std::size_t>(n_eval);
      for (std::size_t g = 0; g < sizes.size(); ++g) {
        BaselineConfig c = config;
        c.seed = derive_seed(config.seed, e, static_cast<std::uint64_t>(sizes[g]));
        const auto fitted = fit_mlp(std::span<const DataPoint>(ep.points.data(), static_cast<std::size_t>(sizes[g])),
                                    tasks.spec, c);
        double s = 0.0;
        for (std::size_t j = tail; j < n; ++j) {
          s += prediction_loss(fitted.predict(ep.points[j].x), ep.points[j], kind);
        }
        errors[e][g] = s / n_eval;
      }
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  PrequentialCurve c;
  c.context_sizes.assign(sizes.begin(), sizes.end());
  c.error_kind = kind;
  c.learner = "sgd";
  c.family = std::string(to_string(tasks.spec.family));
  c.seeds = {config.seed};
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    double m = 0.0;
    for (std::size_t e = 0; e < n_eps; ++e) m += errors[e][g];
    m /= static_cast<double>(n_eps);
    double ss = 0.0;
    for (std::size_t e = 0; e < n_eps; ++e) ss += (errors[e][g] - m) * (errors[e][g] - m);
    c.mean_error.push_back(m);
    c.stderr_.push_back(n_eps > 1 ? std::sqrt(ss / static_cast<double>(n_eps - 1) / static_cast<double>(n_eps)) : 0.0);
  }
  c.per_seed = {c.mean_error};
  return c;
}

}  // namespace preq
