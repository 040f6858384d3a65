#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "preq/rng.hpp"
#include "preq/tasks.hpp"

using namespace preq;

namespace {

// Pairs each code digit with an unused equal guess digit, positional matches first.
MastermindResponse brute_force_response(const std::vector<int>& code, const std::vector<int>& guess) {
  MastermindResponse r;
  std::vector<bool> used(guess.size(), false);
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code[i] == guess[i]) {
      ++r.exact;
      ++r.common;
      used[i] = true;
    }
  }
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code[i] == guess[i]) continue;
    for (std::size_t j = 0; j < guess.size(); ++j) {
      if (!used[j] && code[j] != guess[j] && guess[j] == code[i]) {
        used[j] = true;
        ++r.common;
        break;
      }
    }
  }
  return r;
}

}  // namespace

TEST_CASE("mastermind worked demo") {
  const std::vector<int> code{0, 5, 2, 1, 3, 4, 2, 4};
  const std::vector<int> guess{0, 2, 1, 1, 0, 2, 0, 4};
  const MastermindResponse r = mastermind_response(code, guess);
  CHECK(r.exact == 3);
  CHECK(r.common == 5);
}

TEST_CASE("mastermind matches brute force pairing") {
  Rng rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto code = sample_mastermind_code(8, 6, rng);
    const auto guess = sample_mastermind_code(8, 6, rng);
    REQUIRE(mastermind_response(code, guess) == brute_force_response(code, guess));
  }
  CHECK_THROWS(mastermind_response(std::vector<int>{1, 2}, std::vector<int>{1}));
}

TEST_CASE("mastermind episodes carry responses as labels") {
  Rng rng(3);
  const TaskSpec spec = TaskSpec::mastermind();
  const TaskParams p = sample_task_params(spec, rng);
  const Episode ep = make_episode(spec, p, 20, rng);
  const auto& code = std::get<MastermindParams>(p).code;
  for (const auto& pt : ep.points) {
    REQUIRE(pt.x.size() == 8);
    std::vector<int> guess;
    for (double v : pt.x) guess.push_back(static_cast<int>(v));
    for (int d : guess) CHECK((d >= 0 && d < 6));
    const auto r = brute_force_response(code, guess);
    CHECK(pt.labels == std::vector<int>{r.exact, r.common});
  }
  const IoShape io = io_shape(spec);
  CHECK(io.n_labels == 2);
  CHECK(io.n_classes == 9);
}

TEST_CASE("chebyshev recurrence matches the trigonometric form") {
  for (int n = 0; n <= 10; ++n) {
    for (double x : {-1.0, -0.7, -0.1, 0.0, 0.33, 0.9, 1.0}) {
      CHECK(chebyshev_value(n, x) == doctest::Approx(std::cos(n * std::acos(x))).epsilon(1e-12));
    }
  }
  const std::vector<double> alpha{0.5, -1.0, 2.0};
  const double x = 0.4;
  CHECK(eval_chebyshev(alpha, x, 0.0) == doctest::Approx(0.5 - 1.0 * x + 2.0 * (2 * x * x - 1)));
}

TEST_CASE("chebyshev tasks have no coefficients above the generating degree") {
  Rng rng(11);
  const TaskSpec spec = TaskSpec::chebyshev(1, 8);
  for (int i = 0; i < 20; ++i) {
    const auto a = std::get<ChebyshevParams>(sample_task_params(spec, rng)).alpha;
    for (std::size_t k = 2; k < a.size(); ++k) CHECK(a[k] == 0.0);
  }
}

TEST_CASE("linear and sinusoid targets") {
  Rng rng(5);
  const TaskSpec lin = TaskSpec::linear(3, 0.0);
  const auto lp = std::get<LinearParams>(sample_task_params(lin, rng));
  const Episode ep = make_episode(lin, lp, 10, rng);
  for (const auto& pt : ep.points) {
    double y = lp.b;
    for (std::size_t i = 0; i < 3; ++i) y += lp.w[i] * pt.x[i];
    CHECK(pt.y[0] == doctest::Approx(y).epsilon(1e-12));
  }
  const TaskSpec sin = finalize_spec(TaskSpec::sinusoid(), 9);
  REQUIRE(sin.shared_freqs.size() == 3);
  const std::vector<double> alpha{1.0, 0.5, -2.0};
  const double x = 0.3;
  double want = 0;
  for (int l = 0; l < 3; ++l) want += alpha[l] * std::sin(sin.shared_freqs[l] * x);
  CHECK(eval_sinusoid(alpha, sin.shared_freqs, x) == doctest::Approx(want));
}

TEST_CASE("meta datasets are deterministic and the splits are disjoint") {
  const TaskSpec spec = TaskSpec::linear();
  const auto a = make_meta_datasets(spec, 50, 20, 8, 8, 42);
  const auto b = make_meta_datasets(spec, 50, 20, 8, 8, 42);
  REQUIRE(a.train.episodes.size() == 50);
  REQUIRE(a.eval.episodes.size() == 20);
  for (std::size_t i = 0; i < 50; ++i) CHECK(a.train.episodes[i].points == b.train.episodes[i].points);
  std::set<std::uint64_t> seeds;
  for (const auto& e : a.train.episodes) seeds.insert(e.seed);
  for (const auto& e : a.eval.episodes) CHECK(seeds.count(e.seed) == 0);
  const auto c = make_meta_datasets(spec, 50, 20, 8, 8, 43);
  CHECK(c.train.episodes[0].points != a.train.episodes[0].points);
}

TEST_CASE("spec validation") {
  TaskSpec s = TaskSpec::chebyshev(3, 3);
  CHECK_THROWS(s.validate());
  CHECK_THROWS(family_from_string("cubic"));
  CHECK(family_from_string("hmm_supervised") == Family::hmm_supervised);
  const Episode e = make_meta_dataset(TaskSpec::linear(), 1, 10, 0, Split::train).episodes[0];
  CHECK(e.truncated(4).size() == 4);
  CHECK(e.truncated(40).size() == 10);
}
