#include <doctest.h>

#include <cmath>

#include "preq/sgd_baseline.hpp"

using namespace preq;

TEST_CASE("early stopper counts epochs without enough improvement") {
  EarlyStopper s(0.1, 3);
  CHECK_FALSE(s.observe(1.0));
  CHECK(s.waited() == 0);
  CHECK_FALSE(s.observe(0.95));  // less than delta below best
  CHECK(s.waited() == 1);
  CHECK_FALSE(s.observe(0.85));  // 0.15 below best: resets
  CHECK(s.waited() == 0);
  CHECK(s.best() == doctest::Approx(0.85));
  CHECK_FALSE(s.observe(0.9));
  CHECK_FALSE(s.observe(0.8));
  CHECK(s.observe(0.84));
  CHECK(s.waited() == 3);
}

TEST_CASE("mlp fits a linear map and respects weight decay") {
  const TaskSpec spec = TaskSpec::linear(2, 0.0);
  const Episode ep = make_meta_dataset(spec, 1, 40, 3, Split::train).episodes[0];
  BaselineConfig c;
  c.depth = 2;
  c.width = 16;
  c.learning_rate = 1e-2;
  c.batch_size = 8;
  c.max_epochs = 300;
  c.early_stopping = false;
  const FittedMlp m = fit_mlp(ep.points, spec, c);
  CHECK(m.epochs_used == 300);
  CHECK(m.train_loss < 0.05);
  CHECK(m.objective == doctest::Approx(m.train_loss));
  c.weight_decay = 0.05;
  const FittedMlp d = fit_mlp(ep.points, spec, c);
  CHECK(d.weight_norm2() < m.weight_norm2());
  CHECK(d.objective == doctest::Approx(d.train_loss + 0.05 * d.weight_norm2()).epsilon(1e-4));
  c.early_stopping = true;
  c.early_stop_patience = 2;
  const FittedMlp e = fit_mlp(ep.points, spec, c);
  CHECK(e.epochs_used <= 300);
  CHECK(e.monitor_trace.size() == static_cast<std::size_t>(e.epochs_used));
}

TEST_CASE("fits are deterministic per seed") {
  const TaskSpec spec = TaskSpec::linear(1, 0.04);
  const Episode ep = make_meta_dataset(spec, 1, 12, 8, Split::train).episodes[0];
  BaselineConfig c;
  c.depth = 3;
  c.width = 8;
  c.max_epochs = 20;
  c.seed = 4;
  CHECK(fit_mlp(ep.points, spec, c).params.flatten() == fit_mlp(ep.points, spec, c).params.flatten());
}

TEST_CASE("sgd prequential curve scores held-out points only") {
  const TaskSpec spec = TaskSpec::linear(1, 0.0);
  const MetaDataset eval = make_meta_dataset(spec, 3, 20, 2, Split::eval);
  BaselineConfig c;
  c.depth = 2;
  c.width = 8;
  c.max_epochs = 10;
  const int sizes[] = {1, 4, 10};
  const PrequentialCurve curve = prequential_curve_sgd(eval, sizes, c, 8);
  CHECK(curve.context_sizes == std::vector<int>{1, 4, 10});
  for (double e : curve.mean_error) CHECK(std::isfinite(e));
  const int zero[] = {0, 4};
  CHECK_THROWS(prequential_curve_sgd(eval, zero, c, 8));
  const int big[] = {15};
  CHECK_THROWS(prequential_curve_sgd(eval, big, c, 8));
}
