#include "preq/hmm.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace preq {

void HmmHyper::validate() const {
  const int fields[] = {n_base_cycles,      n_base_speeds,     n_cycle_families,
                        n_group_per_family, n_family_speeds,   n_emission_groups,
                        n_emission_per_group, n_emission_shift, n_states,
                        n_obs,              cycles_per_group};
  for (int f : fields) {
    if (f < 1) throw std::invalid_argument("HmmHyper: every field must be >= 1");
  }
  if (n_states < n_emission_groups) {
    throw std::invalid_argument("HmmHyper: need at least one state per emission group");
  }
  if (family_cycle_min < 1 || family_cycle_max < family_cycle_min) {
    throw std::invalid_argument("HmmHyper: bad family cycle size range");
  }
  if (emission_support < 0 || emission_support > n_obs) {
    throw std::invalid_argument("HmmHyper: emission_support must be in [0, n_obs]");
  }
}

int HmmHyper::support() const {
  return emission_support > 0 ? emission_support : (n_obs + n_emission_groups - 1) / n_emission_groups;
}

void HmmLatent::validate(const HmmHyper& h) const {
  auto in = [](int v, int n) { return v >= 0 && v < n; };
  bool ok = in(base_id, h.n_base_cycles) && in(base_dir, 2) && in(base_speed, h.n_base_speeds) &&
            in(family_dir, 2) && in(family_speed, h.n_family_speeds) &&
            in(emission_shift, h.n_emission_shift) &&
            static_cast<int>(family_group_ids.size()) == h.n_cycle_families &&
            static_cast<int>(emission_ids.size()) == h.n_emission_groups;
  for (int g : family_group_ids) ok = ok && in(g, h.n_group_per_family);
  for (int e : emission_ids) ok = ok && in(e, h.n_emission_per_group);
  if (!ok) throw std::invalid_argument("HmmLatent: index outside hyper ranges");
}

CycleBank build_cycle_bank(const HmmHyper& hyper, Rng& rng) {
  hyper.validate();
  CycleBank bank;
  Cycle all(hyper.n_states);
  std::iota(all.begin(), all.end(), 0);
  for (int b = 0; b < hyper.n_base_cycles; ++b) {
    Cycle c = all;
    std::shuffle(c.begin(), c.end(), rng);
    bank.base_cycles.push_back(std::move(c));
  }
  const int lo = std::min(hyper.family_cycle_min, hyper.n_states);
  const int hi = std::min(hyper.family_cycle_max, hyper.n_states);
  bank.families.resize(hyper.n_cycle_families);
  for (auto& family : bank.families) {
    family.resize(hyper.n_group_per_family);
    for (auto& group : family) {
      for (int c = 0; c < hyper.cycles_per_group; ++c) {
        Cycle pool = all;
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(uniform_int(rng, lo, hi));
        group.push_back(std::move(pool));
      }
    }
  }
  return bank;
}

Cycle cycle_dir(const Cycle& c, int k) {
  if (c.empty()) throw std::invalid_argument("cycle_dir: empty cycle");
  if (k != 1) return c;
  Cycle out;
  out.reserve(c.size());
  out.push_back(c[0]);
  for (std::size_t i = c.size() - 1; i >= 1; --i) out.push_back(c[i]);
  return out;
}

Cycle cycle_speed(const Cycle& c, int k) {
  if (c.empty()) throw std::invalid_argument("cycle_speed: empty cycle");
  if (k < 1) throw std::invalid_argument("cycle_speed: speed must be >= 1");
  const std::size_t n = c.size();
  Cycle out{c[0]};
  for (std::size_t idx = k % n; idx != 0; idx = (idx + k) % n) out.push_back(c[idx]);
  return out;
}

Matrix cycle_transition_matrix(const Cycle& c, int n_states) {
  if (c.empty()) throw std::invalid_argument("cycle_transition_matrix: empty cycle");
  std::vector<bool> seen(n_states, false);
  for (int s : c) {
    if (s < 0 || s >= n_states) throw std::out_of_range("cycle_transition_matrix: bad state");
    if (seen[s]) throw std::invalid_argument("cycle_transition_matrix: repeated state in cycle");
    seen[s] = true;
  }
  Matrix t(n_states, n_states);
  for (std::size_t i = 0; i < c.size(); ++i) t(c[i], c[(i + 1) % c.size()]) = 1.0;
  return t;
}

namespace {

void accumulate(Matrix& into, const Matrix& m) {
  for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += m.data[i];
}

void normalize_rows(Matrix& m) {
  for (int r = 0; r < m.rows; ++r) {
    double total = 0;
    for (int c = 0; c < m.cols; ++c) total += m(r, c);
    for (int c = 0; c < m.cols; ++c) m(r, c) /= total;
  }
}

}  // namespace

Matrix assemble_transition(const CycleBank& bank, const HmmLatent& latent,
                           const HmmHyper& hyper) {
  latent.validate(hyper);
  const int n = hyper.n_states;
  Matrix a = cycle_transition_matrix(
      cycle_speed(cycle_dir(bank.base_cycles.at(latent.base_id), latent.base_dir),
                  latent.base_speed + 1),
      n);
  for (int f = 0; f < hyper.n_cycle_families; ++f) {
    for (const Cycle& c : bank.families.at(f).at(latent.family_group_ids[f])) {
      accumulate(a, cycle_transition_matrix(
                        cycle_speed(cycle_dir(c, latent.family_dir), latent.family_speed + 1), n));
    }
  }
  for (int r = 0; r < n; ++r) {
    double total = 0;
    for (int c = 0; c < n; ++c) total += a(r, c);
    if (total == 0.0) a(r, r) = 1.0;
  }
  normalize_rows(a);
  return a;
}

EmissionBank build_emission_bank(const HmmHyper& hyper, Rng& rng) {
  hyper.validate();
  EmissionBank bank;
  const int g = hyper.n_emission_groups;
  const int base = hyper.n_states / g, extra = hyper.n_states % g;
  int next = 0;
  for (int i = 0; i < g; ++i) {
    const int size = base + (i < extra ? 1 : 0);
    std::vector<int> group(size);
    std::iota(group.begin(), group.end(), next);
    next += size;
    bank.state_groups.push_back(std::move(group));
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  bank.sub_matrices.resize(g);
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < hyper.n_emission_per_group; ++j) {
      Matrix h(static_cast<int>(bank.state_groups[i].size()), hyper.n_obs);
      const int start = static_cast<int>(rng() % static_cast<std::uint64_t>(hyper.n_obs));
      for (int r = 0; r < h.rows; ++r) {
        for (int c = 0; c < hyper.support(); ++c) h(r, (start + c) % hyper.n_obs) = 1.0 - u01(rng);
      }
      bank.sub_matrices[i].push_back(std::move(h));
    }
  }
  return bank;
}

Matrix emission_shift(const Matrix& h, int k) {
  if (k < 0) throw std::invalid_argument("emission_shift: k must be >= 0");
  Matrix out(h.rows, h.cols);
  for (int r = 0; r < h.rows; ++r) {
    for (int c = 0; c < h.cols; ++c) out(r, (c + k) % h.cols) = h(r, c);
  }
  return out;
}

Matrix assemble_emission(const EmissionBank& bank, const HmmLatent& latent,
                         const HmmHyper& hyper) {
  latent.validate(hyper);
  Matrix b(hyper.n_states, hyper.n_obs);
  for (int g = 0; g < hyper.n_emission_groups; ++g) {
    const Matrix shifted =
        emission_shift(bank.sub_matrices.at(g).at(latent.emission_ids[g]), latent.emission_shift);
    const auto& states = bank.state_groups.at(g);
    for (std::size_t r = 0; r < states.size(); ++r) {
      for (int c = 0; c < hyper.n_obs; ++c) b(states[r], c) += shifted(static_cast<int>(r), c);
    }
  }
  normalize_rows(b);
  return b;
}

namespace {

// Mixed-radix counter over `radices`, calling f(digits) for every combination.
template <class F>
void for_each_digits(const std::vector<int>& radices, F f) {
  std::vector<int> digits(radices.size(), 0);
  while (true) {
    f(digits);
    std::size_t i = 0;
    for (; i < digits.size(); ++i) {
      if (++digits[i] < radices[i]) break;
      digits[i] = 0;
    }
    if (i == digits.size()) return;
  }
}

}  // namespace

std::vector<HmmLatent> enumerate_transition_latents(const HmmHyper& h) {
  h.validate();
  std::vector<int> radices{h.n_base_cycles, 2, h.n_base_speeds, 2, h.n_family_speeds};
  for (int f = 0; f < h.n_cycle_families; ++f) radices.push_back(h.n_group_per_family);
  std::vector<HmmLatent> out;
  for_each_digits(radices, [&](const std::vector<int>& d) {
    HmmLatent l;
    l.base_id = d[0];
    l.base_dir = d[1];
    l.base_speed = d[2];
    l.family_dir = d[3];
    l.family_speed = d[4];
    l.family_group_ids.assign(d.begin() + 5, d.end());
    l.emission_ids.assign(h.n_emission_groups, 0);
    out.push_back(std::move(l));
  });
  return out;
}

std::vector<HmmLatent> enumerate_emission_latents(const HmmHyper& h) {
  h.validate();
  std::vector<int> radices{h.n_emission_shift};
  for (int g = 0; g < h.n_emission_groups; ++g) radices.push_back(h.n_emission_per_group);
  std::vector<HmmLatent> out;
  for_each_digits(radices, [&](const std::vector<int>& d) {
    HmmLatent l;
    l.family_group_ids.assign(h.n_cycle_families, 0);
    l.emission_shift = d[0];
    l.emission_ids.assign(d.begin() + 1, d.end());
    out.push_back(std::move(l));
  });
  return out;
}

std::vector<HmmLatent> enumerate_latents(const HmmHyper& h) {
  const auto trans = enumerate_transition_latents(h);
  const auto emis = enumerate_emission_latents(h);
  std::vector<HmmLatent> out;
  out.reserve(trans.size() * emis.size());
  for (const auto& t : trans) {
    for (const auto& e : emis) {
      HmmLatent l = t;
      l.emission_ids = e.emission_ids;
      l.emission_shift = e.emission_shift;
      out.push_back(std::move(l));
    }
  }
  return out;
}

std::uint64_t transition_latent_count(const HmmHyper& h) {
  std::uint64_t n = static_cast<std::uint64_t>(h.n_base_cycles) * 2 * h.n_base_speeds * 2 *
                    h.n_family_speeds;
  for (int f = 0; f < h.n_cycle_families; ++f) n *= h.n_group_per_family;
  return n;
}

std::uint64_t emission_latent_count(const HmmHyper& h) {
  std::uint64_t n = h.n_emission_shift;
  for (int g = 0; g < h.n_emission_groups; ++g) n *= h.n_emission_per_group;
  return n;
}

Hmm make_hmm(const CycleBank& cycles, const EmissionBank& emissions, const HmmLatent& latent,
             const HmmHyper& hyper) {
  Hmm hmm;
  hmm.pi.assign(hyper.n_states, 1.0 / hyper.n_states);
  hmm.A = assemble_transition(cycles, latent, hyper);
  hmm.B = assemble_emission(emissions, latent, hyper);
  return hmm;
}

ObservationSequence sample_sequence(const Hmm& hmm, int length, Rng& rng) {
  if (length < 1) throw std::invalid_argument("sample_sequence: length must be >= 1");
  auto row_dist = [](const Matrix& m, int r) {
    return std::discrete_distribution<int>(m.data.begin() + static_cast<long>(r) * m.cols,
                                           m.data.begin() + static_cast<long>(r + 1) * m.cols);
  };
  std::vector<std::discrete_distribution<int>> trans, emit;
  for (int r = 0; r < hmm.A.rows; ++r) {
    trans.push_back(row_dist(hmm.A, r));
    emit.push_back(row_dist(hmm.B, r));
  }
  std::discrete_distribution<int> init(hmm.pi.begin(), hmm.pi.end());
  ObservationSequence seq;
  seq.tokens.reserve(length);
  int z = init(rng);
  for (int t = 0; t < length; ++t) {
    seq.tokens.push_back(emit[z](rng));
    z = trans[z](rng);
  }
  return seq;
}

HmmWorld build_hmm_world(const HmmHyper& hyper, std::uint64_t seed, double eval_fraction) {
  if (eval_fraction <= 0.0 || eval_fraction >= 1.0) {
    throw std::invalid_argument("build_hmm_world: eval_fraction must be in (0, 1)");
  }
  HmmWorld world;
  world.hyper = hyper;
  Rng bank_rng(derive_seed(seed, seed_tag::hmm_banks));
  world.cycles = build_cycle_bank(hyper, bank_rng);
  world.emissions = build_emission_bank(hyper, bank_rng);
  auto all = enumerate_latents(hyper);
  if (all.size() < 2) throw std::invalid_argument("build_hmm_world: need at least two latents");
  Rng split_rng(derive_seed(seed, seed_tag::hmm_split));
  std::shuffle(all.begin(), all.end(), split_rng);
  std::size_t n_eval = static_cast<std::size_t>(eval_fraction * static_cast<double>(all.size()));
  n_eval = std::clamp<std::size_t>(n_eval, 1, all.size() - 1);
  world.eval_latents.assign(all.begin(), all.begin() + static_cast<long>(n_eval));
  world.train_latents.assign(all.begin() + static_cast<long>(n_eval), all.end());
  return world;
}

}  // namespace preq
