#include <doctest.h>

#include <random>

#include "preq/gradcheck.hpp"
#include "preq/learners.hpp"
#include "preq/objectives.hpp"
#include "preq/rng.hpp"

using namespace preq;

namespace {

LearnerConfig toy(Arch arch, const TaskSpec& spec) {
  LearnerConfig c;
  c.arch = arch;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 12;
  c.d_bottleneck = 6;
  c.head_depth = 2;
  c.head_width = 8;
  c.max_context = 16;
  c.rel_span = 4;
  return configure_io(c, spec);
}

Episode episode_for(const TaskSpec& spec, int n, std::uint64_t seed) {
  return make_meta_dataset(finalize_spec(spec, seed), 1, n, seed, Split::train).episodes[0];
}

SequenceLearner<double> learner_for(const LearnerConfig& c, std::uint64_t seed) {
  return SequenceLearner<double>(c, init_params(c, seed).cast<double>());
}

std::vector<double> rows_of(const SequenceLearner<double>& l, const Episode& ep, std::span<const Query> q) {
  ad::Tape<double> t(false);
  auto p = l.bind(t);
  auto v = t.value(l.outputs(t, p, ep, q));
  return {v.begin(), v.end()};
}

constexpr Arch kArchs[] = {Arch::bottleneck, Arch::dual_stream, Arch::recurrent};

}  // namespace

TEST_CASE("gradients match finite differences") {
  for (Arch arch : kArchs) {
    for (const TaskSpec& spec : {TaskSpec::linear(2), TaskSpec::mastermind(3, 3)}) {
      CAPTURE(to_string(arch));
      CAPTURE(to_string(spec.family));
      const LearnerConfig c = toy(arch, spec);
      const auto learner = learner_for(c, 1);
      const Episode ep = episode_for(spec, 6, 2);
      const auto q = prequential_queries(ep.size());
      const GradCheckResult r = grad_check(learner, ep, q, 80, 3);
      CAPTURE(r.worst);
      CAPTURE(r.worst_analytic);
      CAPTURE(r.worst_numeric);
      CHECK(r.checked == 80);
      CHECK(r.max_rel_error <= 1e-4);
    }
  }
}

TEST_CASE("relative positions and chebyshev heads have correct gradients") {
  LearnerConfig c = toy(Arch::bottleneck, TaskSpec::chebyshev(1, 5));
  c.positional = Positional::relative;
  c.output_kind = OutputKind::chebyshev;
  c = configure_io(c, TaskSpec::chebyshev(1, 5));
  CHECK(c.d_bottleneck == 5);
  const auto learner = learner_for(c, 4);
  const Episode ep = episode_for(TaskSpec::chebyshev(1, 5), 6, 5);
  const auto q = prequential_queries(ep.size());
  const GradCheckResult r = grad_check(learner, ep, q, 80, 6);
  CAPTURE(r.worst);
  CAPTURE(r.worst_analytic);
  CAPTURE(r.worst_numeric);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("predictions ignore the future and the query label") {
  std::mt19937 rng(9);
  std::normal_distribution<double> noise;
  for (Arch arch : kArchs) {
    CAPTURE(to_string(arch));
    const TaskSpec spec = TaskSpec::linear(2);
    const LearnerConfig c = toy(arch, spec);
    const auto learner = learner_for(c, 7);
    const Episode ep = episode_for(spec, 10, 8);
    const auto q = prequential_queries(ep.size());
    const auto base = rows_of(learner, ep, q);
    const std::size_t w = base.size() / q.size();
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t t = static_cast<std::size_t>(trial) % ep.size();
      Episode pert = ep;
      pert.points[t].y[0] += 5.0 * noise(rng);
      for (std::size_t j = t + 1; j < ep.size(); ++j) {
        pert.points[j].y[0] = noise(rng);
        for (double& x : pert.points[j].x) x = noise(rng);
      }
      const auto moved = rows_of(learner, pert, q);
      for (std::size_t r = 0; r <= t; ++r) {
        for (std::size_t k = 0; k < w; ++k) REQUIRE(moved[r * w + k] == base[r * w + k]);
      }
    }
  }
}

TEST_CASE("attention masks") {
  const auto q = query_stream_mask(3);
  const auto d = context_stream_mask(3);
  CHECK(q[0][0] == 0);
  CHECK(q[2][1] == 1);
  CHECK(q[2][2] == 0);
  CHECK(d[2][2] == 1);
  CHECK(d[1][2] == 0);
}

TEST_CASE("parameter sets") {
  const LearnerConfig c = toy(Arch::bottleneck, TaskSpec::linear(2));
  const auto p = init_params(c, 1);
  const auto flat = p.flatten();
  CHECK(flat.size() == p.total_size());
  auto q = init_params(c, 2);
  CHECK(q.flatten() != flat);
  q.assign_flat(flat);
  CHECK(q.flatten() == flat);
  CHECK(p.contains("embed.w"));
  CHECK(p.contains("L1.wq"));
  CHECK_FALSE(p.contains("out.w"));
  CHECK(init_params(c, 1).flatten() == flat);
  ParamSet<float> broken = p;
  broken[0].data[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS(SequenceLearner<float>(c, broken));
}

TEST_CASE("featurization") {
  LearnerConfig c = toy(Arch::bottleneck, TaskSpec::mastermind(3, 4));
  CHECK(c.x_encoding == XEncoding::one_hot_digits);
  const std::vector<double> x{2, 0, 3};
  const auto f = featurize_x(c, x);
  CHECK(f.size() == 12);
  CHECK(f[2] == 1.0);
  CHECK(f[4] == 1.0);
  CHECK(f[11] == 1.0);
  const Episode ep = episode_for(TaskSpec::mastermind(3, 4), 4, 1);
  const TokenMatrix tok = encode_tokens(ep, c);
  CHECK(tok.rows == 5);
  for (int k = 0; k < tok.cols; ++k) CHECK(tok.data[static_cast<std::size_t>(k)] == 0.0);
}
