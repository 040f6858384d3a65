#pragma once

// Structured HMM family: transition matrices are assembled from a bank of
// pre-generated cycles (base cycles over all states plus families of short
// cycles), emission matrices from per-state-group banks of sub-emission
// matrices. A latent picks and manipulates the building blocks.

#include <cstdint>
#include <vector>

#include "preq/rng.hpp"

namespace preq {

struct HmmHyper {
  int n_base_cycles = 4;
  int n_base_speeds = 2;
  int n_cycle_families = 3;
  int n_group_per_family = 2;
  int n_family_speeds = 2;
  int n_emission_groups = 3;
  int n_emission_per_group = 2;
  int n_emission_shift = 3;
  int n_states = 20;
  int n_obs = 50;
  // Family cycle shape; not fixed by the generative description.
  int family_cycle_min = 3;
  int family_cycle_max = 6;
  int cycles_per_group = 2;
  // Observations each sub-emission matrix puts mass on (a circular window);
  // 0 means ceil(n_obs / n_emission_groups).
  int emission_support = 0;

  [[nodiscard]] int support() const;

  void validate() const;
  bool operator==(const HmmHyper&) const = default;
};

struct HmmLatent {
  int base_id = 0;
  int base_dir = 0;
  int base_speed = 0;                  // index; traversal step is base_speed + 1
  std::vector<int> family_group_ids;   // one per family
  int family_dir = 0;
  int family_speed = 0;                // index; traversal step is family_speed + 1
  std::vector<int> emission_ids;       // one per state group
  int emission_shift = 0;              // circular shift applied to observations

  void validate(const HmmHyper& hyper) const;
  bool operator==(const HmmLatent&) const = default;
  auto operator<=>(const HmmLatent&) const = default;
};

using Cycle = std::vector<int>;

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const Matrix&) const = default;
};

struct CycleBank {
  std::vector<Cycle> base_cycles;                          // [base]
  std::vector<std::vector<std::vector<Cycle>>> families;   // [family][group][cycle]
};

struct EmissionBank {
  std::vector<std::vector<int>> state_groups;   // contiguous partition of the states
  std::vector<std::vector<Matrix>> sub_matrices;  // [group][variant], |group| x n_obs
};

struct Hmm {
  std::vector<double> pi;
  Matrix A;  // A(i, j) = P(z_next = j | z = i)
  Matrix B;  // B(i, x) = P(x | z = i)
};

struct ObservationSequence {
  std::vector<int> tokens;
  HmmLatent latent;
  std::uint64_t seed = 0;
};

CycleBank build_cycle_bank(const HmmHyper& hyper, Rng& rng);

Cycle cycle_dir(const Cycle& c, int k);
// (c_0, c_k, c_2k, ...) indices mod |c|, stopping before the walk returns to index 0.
Cycle cycle_speed(const Cycle& c, int k);
// Binary matrix with a 1 at (c_i, c_{i+1 mod n}); throws on repeated states.
Matrix cycle_transition_matrix(const Cycle& c, int n_states);

Matrix assemble_transition(const CycleBank& bank, const HmmLatent& latent, const HmmHyper& hyper);

EmissionBank build_emission_bank(const HmmHyper& hyper, Rng& rng);
// Columns move from c to (c + k) mod cols.
Matrix emission_shift(const Matrix& h, int k);
Matrix assemble_emission(const EmissionBank& bank, const HmmLatent& latent, const HmmHyper& hyper);

// Transition part (base, dirs, speeds, family groups) and emission part
// (emission ids, shift) enumerate independently; enumerate_latents is their product.
std::vector<HmmLatent> enumerate_transition_latents(const HmmHyper& hyper);
std::vector<HmmLatent> enumerate_emission_latents(const HmmHyper& hyper);
std::vector<HmmLatent> enumerate_latents(const HmmHyper& hyper);
std::uint64_t transition_latent_count(const HmmHyper& hyper);
std::uint64_t emission_latent_count(const HmmHyper& hyper);

Hmm make_hmm(const CycleBank& cycles, const EmissionBank& emissions, const HmmLatent& latent,
             const HmmHyper& hyper);

ObservationSequence sample_sequence(const Hmm& hmm, int length, Rng& rng);

// Banks plus a disjoint train/eval partition of the latent space.
struct HmmWorld {
  HmmHyper hyper;
  CycleBank cycles;
  EmissionBank emissions;
  std::vector<HmmLatent> train_latents;
  std::vector<HmmLatent> eval_latents;
};

HmmWorld build_hmm_world(const HmmHyper& hyper, std::uint64_t seed, double eval_fraction);

}  // namespace preq
