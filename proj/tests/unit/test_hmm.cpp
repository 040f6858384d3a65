#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "preq/hmm.hpp"
#include "preq/rng.hpp"
#include "preq/tasks.hpp"

using namespace preq;

namespace {

void check_row_stochastic(const Matrix& m) {
  for (int r = 0; r < m.rows; ++r) {
    double s = 0;
    for (int c = 0; c < m.cols; ++c) {
      REQUIRE(m(r, c) >= 0.0);
      s += m(r, c);
    }
    REQUIRE(std::abs(s - 1.0) < 1e-9);
  }
}

}  // namespace

TEST_CASE("cycle manipulation") {
  const Cycle c{3, 1, 4, 0, 2};
  CHECK(cycle_dir(c, 1) == Cycle{3, 2, 0, 4, 1});
  CHECK(cycle_dir(c, 0) == c);
  CHECK(cycle_speed(c, 1) == c);
  CHECK(cycle_speed(c, 2) == Cycle{3, 4, 2, 1, 0});
  // gcd(2, 4) = 2: the sped-up walk closes after two states.
  CHECK(cycle_speed(Cycle{0, 1, 2, 3}, 2) == Cycle{0, 2});
  const Matrix t = cycle_transition_matrix(Cycle{2, 0, 1}, 4);
  CHECK(t(2, 0) == 1.0);
  CHECK(t(0, 1) == 1.0);
  CHECK(t(1, 2) == 1.0);
  CHECK(t(3, 3) == 0.0);
  CHECK_THROWS(cycle_transition_matrix(Cycle{0, 0}, 3));
}

TEST_CASE("emission shift is circular over observations") {
  Matrix h(1, 4);
  h(0, 0) = 0.1;
  h(0, 3) = 0.9;
  const Matrix s = emission_shift(h, 1);
  CHECK(s(0, 1) == doctest::Approx(0.1));
  CHECK(s(0, 0) == doctest::Approx(0.9));
}

TEST_CASE("latent counts with the reference hyper-parameters") {
  const HmmHyper h;
  CHECK(transition_latent_count(h) == 512);
  CHECK(emission_latent_count(h) == 24);
  const auto t = enumerate_transition_latents(h);
  const auto e = enumerate_emission_latents(h);
  CHECK(t.size() == 512);
  CHECK(e.size() == 24);
  CHECK(std::set<HmmLatent>(t.begin(), t.end()).size() == 512);
  CHECK(enumerate_latents(h).size() == 512u * 24u);
}

TEST_CASE("assembled matrices are row stochastic") {
  const HmmHyper h;
  Rng rng(1);
  const CycleBank cycles = build_cycle_bank(h, rng);
  const EmissionBank emissions = build_emission_bank(h, rng);
  const auto latents = enumerate_latents(h);
  for (std::size_t i = 0; i < latents.size(); i += 97) {
    const Hmm m = make_hmm(cycles, emissions, latents[i], h);
    check_row_stochastic(m.A);
    check_row_stochastic(m.B);
    CHECK(std::accumulate(m.pi.begin(), m.pi.end(), 0.0) == doctest::Approx(1.0));
  }
}

TEST_CASE("world split keeps train and eval latents apart") {
  const HmmWorld w = build_hmm_world(HmmHyper{}, 3, 0.25);
  std::set<HmmLatent> train(w.train_latents.begin(), w.train_latents.end());
  for (const auto& l : w.eval_latents) CHECK(train.count(l) == 0);
  CHECK(w.train_latents.size() + w.eval_latents.size() == 512u * 24u);
}

TEST_CASE("sequences stay in range") {
  const HmmHyper h;
  Rng rng(2);
  const CycleBank cycles = build_cycle_bank(h, rng);
  const EmissionBank emissions = build_emission_bank(h, rng);
  const Hmm m = make_hmm(cycles, emissions, enumerate_latents(h)[5], h);
  const ObservationSequence seq = sample_sequence(m, 200, rng);
  CHECK(seq.tokens.size() == 200);
  for (int t : seq.tokens) CHECK((t >= 0 && t < h.n_obs));
  const Episode sup = hmm_to_supervised(seq, h);
  CHECK(sup.points.front().x == std::vector<double>{1.0});
  CHECK(sup.points.back().x == std::vector<double>{200.0});
}

TEST_CASE("sub-emission matrices cover a circular window of observations") {
  HmmHyper h;
  CHECK(h.support() == 17);
  Rng rng(4);
  const EmissionBank bank = build_emission_bank(h, rng);
  CHECK(bank.state_groups[0].size() == 7);
  CHECK(bank.state_groups[2].size() == 6);
  for (const auto& group : bank.sub_matrices) {
    for (const Matrix& m : group) {
      CHECK(m.cols == 50);
      for (int r = 0; r < m.rows; ++r) {
        std::vector<int> on;
        for (int c = 0; c < m.cols; ++c) {
          if (m(r, c) > 0.0) on.push_back(c);
        }
        REQUIRE(on.size() == 17);
        // Contiguous modulo 50: exactly one gap between consecutive support columns.
        int gaps = 0;
        for (std::size_t i = 0; i < on.size(); ++i) {
          const int next = on[(i + 1) % on.size()];
          gaps += (next - on[i] + 50) % 50 != 1;
        }
        CHECK(gaps == 1);
      }
    }
  }
  h.emission_support = 50;
  Rng rng2(4);
  const EmissionBank full = build_emission_bank(h, rng2);
  for (double v : full.sub_matrices[1][0].data) CHECK(v > 0.0);
  h.emission_support = 51;
  CHECK_THROWS(h.validate());
}
