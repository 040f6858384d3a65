#include "preq/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace preq {

std::string_view to_string(Family f) {
  switch (f) {
    case Family::linear: return "linear";
    case Family::sinusoid: return "sinusoid";
    case Family::mastermind: return "mastermind";
    case Family::chebyshev: return "chebyshev";
    case Family::hmm: return "hmm";
    case Family::hmm_supervised: return "hmm_supervised";
  }
  return "unknown";
}

Family family_from_string(std::string_view name) {
  for (Family f : {Family::linear, Family::sinusoid, Family::mastermind, Family::chebyshev,
                   Family::hmm, Family::hmm_supervised}) {
    if (to_string(f) == name) return f;
  }
  throw std::invalid_argument("unknown task family: " + std::string(name));
}

TaskSpec TaskSpec::linear(int input_dim, double noise_var) {
  TaskSpec s;
  s.family = Family::linear;
  s.input_dim = input_dim;
  s.noise_var = noise_var;
  return s;
}

TaskSpec TaskSpec::sinusoid(int input_dim, int n_terms) {
  TaskSpec s;
  s.family = Family::sinusoid;
  s.input_dim = input_dim;
  s.n_terms = n_terms;
  s.noise_var = 0.0;
  return s;
}

TaskSpec TaskSpec::mastermind(int code_length, int alphabet_size) {
  TaskSpec s;
  s.family = Family::mastermind;
  s.code_length = code_length;
  s.alphabet_size = alphabet_size;
  s.input_dim = code_length;
  return s;
}

TaskSpec TaskSpec::chebyshev(int gen_degree, int basis_size, double noise_var) {
  TaskSpec s;
  s.family = Family::chebyshev;
  s.input_dim = 1;
  s.gen_degree = gen_degree;
  s.basis_size = basis_size;
  s.noise_var = noise_var;
  return s;
}

TaskSpec TaskSpec::hidden_markov(const HmmHyper& hyper) {
  TaskSpec s;
  s.family = Family::hmm;
  s.input_dim = 0;
  s.hmm = hyper;
  return s;
}

void TaskSpec::validate() const {
  if (noise_var < 0.0) throw std::invalid_argument("TaskSpec: noise_var must be >= 0");
  switch (family) {
    case Family::linear:
    case Family::sinusoid:
      if (input_dim < 1) throw std::invalid_argument("TaskSpec: input_dim must be >= 1");
      if (family == Family::sinusoid) {
        if (n_terms < 1) throw std::invalid_argument("TaskSpec: sinusoid needs n_terms >= 1");
        if (!shared_freqs.empty() &&
            shared_freqs.size() != static_cast<std::size_t>(n_terms) * input_dim) {
          throw std::invalid_argument("TaskSpec: shared_freqs must hold n_terms * input_dim");
        }
      }
      break;
    case Family::mastermind:
      if (code_length < 1 || alphabet_size < 1) {
        throw std::invalid_argument("TaskSpec: mastermind needs code_length, alphabet >= 1");
      }
      break;
    case Family::chebyshev:
      if (gen_degree < 0 || basis_size < gen_degree + 1) {
        throw std::invalid_argument("TaskSpec: chebyshev needs basis_size > gen_degree >= 0");
      }
      break;
    case Family::hmm:
    case Family::hmm_supervised:
      hmm.validate();
      break;
  }
}

IoShape io_shape(const TaskSpec& spec) {
  switch (spec.family) {
    case Family::linear:
    case Family::sinusoid: return {spec.input_dim, 1, 0, 0};
    case Family::chebyshev: return {1, 1, 0, 0};
    case Family::mastermind: return {spec.code_length, 0, 2, spec.code_length + 1};
    case Family::hmm: return {0, 0, 1, spec.hmm.n_obs};
    case Family::hmm_supervised: return {1, 0, 1, spec.hmm.n_obs};
  }
  throw std::logic_error("io_shape: unhandled family");
}

Episode Episode::truncated(std::size_t n) const {
  Episode e;
  e.points.assign(points.begin(), points.begin() + static_cast<long>(std::min(n, points.size())));
  e.params = params;
  e.spec = spec;
  e.seed = seed;
  return e;
}

LinearParams sample_linear_task(const TaskSpec& spec, Rng& rng) {
  LinearParams p;
  p.w.resize(spec.input_dim);
  for (double& w : p.w) w = standard_normal(rng);
  p.b = standard_normal(rng);
  return p;
}

double eval_linear(const LinearParams& params, std::span<const double> x, double noise) {
  if (x.size() != params.w.size()) throw std::invalid_argument("eval_linear: dimension mismatch");
  double y = params.b;
  for (std::size_t i = 0; i < x.size(); ++i) y += params.w[i] * x[i];
  return y + noise;
}

std::vector<double> sample_shared_frequencies(int count, Rng& rng) {
  if (count < 1) throw std::invalid_argument("sample_shared_frequencies: count must be >= 1");
  std::vector<double> w(count);
  for (double& v : w) v = uniform(rng, 0.0, 5.0);
  return w;
}

double eval_sinusoid(std::span<const double> alpha, std::span<const double> freqs, double x) {
  if (alpha.size() != freqs.size()) throw std::invalid_argument("eval_sinusoid: length mismatch");
  double y = 0;
  for (std::size_t l = 0; l < alpha.size(); ++l) y += alpha[l] * std::sin(freqs[l] * x);
  return y;
}

double eval_sinusoid(std::span<const double> alpha, std::span<const double> freqs,
                     std::span<const double> x) {
  const std::size_t d = x.size();
  if (d == 0 || freqs.size() != alpha.size() * d) {
    throw std::invalid_argument("eval_sinusoid: length mismatch");
  }
  double y = 0;
  for (std::size_t l = 0; l < alpha.size(); ++l) {
    double phase = 0;
    for (std::size_t j = 0; j < d; ++j) phase += freqs[l * d + j] * x[j];
    y += alpha[l] * std::sin(phase);
  }
  return y;
}

std::vector<int> sample_mastermind_code(int length, int alphabet, Rng& rng) {
  if (length < 1 || alphabet < 1) {
    throw std::invalid_argument("sample_mastermind_code: length and alphabet must be >= 1");
  }
  std::vector<int> code(length);
  for (int& d : code) d = uniform_int(rng, 0, alphabet - 1);
  return code;
}

MastermindResponse mastermind_response(std::span<const int> code, std::span<const int> guess) {
  if (code.size() != guess.size()) {
    throw std::invalid_argument("mastermind_response: length mismatch");
  }
  MastermindResponse r;
  int largest = 0;
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code[i] < 0 || guess[i] < 0) throw std::out_of_range("mastermind_response: bad digit");
    largest = std::max({largest, code[i], guess[i]});
    if (code[i] == guess[i]) ++r.exact;
  }
  std::vector<int> in_code(largest + 1, 0), in_guess(largest + 1, 0);
  for (std::size_t i = 0; i < code.size(); ++i) {
    ++in_code[code[i]];
    ++in_guess[guess[i]];
  }
  for (int d = 0; d <= largest; ++d) r.common += std::min(in_code[d], in_guess[d]);
  return r;
}

double chebyshev_value(int n, double x) {
  if (n == 0) return 1.0;
  double prev = 1.0, cur = x;
  for (int i = 1; i < n; ++i) {
    const double next = 2.0 * x * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

double eval_chebyshev(std::span<const double> alpha, double x, double noise) {
  // Clenshaw summation of sum_i alpha_i C_i(x).
  double b1 = 0, b2 = 0;
  for (std::size_t i = alpha.size(); i-- > 1;) {
    const double b0 = alpha[i] + 2.0 * x * b1 - b2;
    b2 = b1;
    b1 = b0;
  }
  const double a0 = alpha.empty() ? 0.0 : alpha[0];
  return a0 + x * b1 - b2 + noise;
}

TaskParams sample_task_params(const TaskSpec& spec, Rng& rng) {
  switch (spec.family) {
    case Family::linear: return sample_linear_task(spec, rng);
    case Family::sinusoid: {
      SinusoidParams p;
      p.alpha.resize(spec.n_terms);
      for (double& a : p.alpha) a = standard_normal(rng);
      return p;
    }
    case Family::mastermind:
      return MastermindParams{sample_mastermind_code(spec.code_length, spec.alphabet_size, rng)};
    case Family::chebyshev: {
      ChebyshevParams p;
      p.alpha.assign(spec.basis_size, 0.0);
      for (int i = 0; i <= spec.gen_degree; ++i) p.alpha[i] = standard_normal(rng);
      return p;
    }
    case Family::hmm:
    case Family::hmm_supervised:
      throw std::invalid_argument("sample_task_params: HMM tasks come from an HmmWorld");
  }
  throw std::logic_error("sample_task_params: unhandled family");
}

Episode make_episode(const TaskSpec& spec, const TaskParams& params, int n_points, Rng& rng) {
  if (n_points < 1) throw std::invalid_argument("make_episode: need at least one point");
  Episode ep;
  ep.spec = spec;
  ep.params = params;
  ep.points.reserve(n_points);
  const double sigma = std::sqrt(spec.noise_var);
  auto noise = [&] { return sigma > 0 ? sigma * standard_normal(rng) : 0.0; };
  for (int t = 0; t < n_points; ++t) {
    DataPoint d;
    switch (spec.family) {
      case Family::linear: {
        d.x.resize(spec.input_dim);
        for (double& v : d.x) v = standard_normal(rng);
        d.y = {eval_linear(std::get<LinearParams>(params), d.x, noise())};
        break;
      }
      case Family::sinusoid: {
        d.x.resize(spec.input_dim);
        for (double& v : d.x) v = standard_normal(rng);
        const auto& p = std::get<SinusoidParams>(params);
        d.y = {eval_sinusoid(p.alpha, spec.shared_freqs, d.x) + noise()};
        break;
      }
      case Family::mastermind: {
        const auto& code = std::get<MastermindParams>(params).code;
        const auto guess = sample_mastermind_code(spec.code_length, spec.alphabet_size, rng);
        d.x.assign(guess.begin(), guess.end());
        const auto r = mastermind_response(code, guess);
        d.labels = {r.exact, r.common};
        break;
      }
      case Family::chebyshev: {
        const double x = uniform(rng, -1.0, 1.0);
        d.x = {x};
        d.y = {eval_chebyshev(std::get<ChebyshevParams>(params).alpha, x, noise())};
        break;
      }
      case Family::hmm:
      case Family::hmm_supervised:
        throw std::invalid_argument("make_episode: HMM episodes come from sample_sequence");
    }
    ep.points.push_back(std::move(d));
  }
  return ep;
}

TaskSpec finalize_spec(TaskSpec spec, std::uint64_t seed) {
  if (spec.family == Family::sinusoid && spec.shared_freqs.empty()) {
    Rng rng(derive_seed(seed, seed_tag::frequencies));
    spec.shared_freqs = sample_shared_frequencies(spec.n_terms * spec.input_dim, rng);
  }
  spec.validate();
  return spec;
}

MetaDataset make_meta_dataset(const TaskSpec& spec_in, int n_tasks, int n_points,
                              std::uint64_t seed, Split split, const HmmWorld* world) {
  if (n_tasks < 1) throw std::invalid_argument("make_meta_dataset: need at least one task");
  const TaskSpec spec = finalize_spec(spec_in, seed);
  const bool is_hmm = spec.family == Family::hmm || spec.family == Family::hmm_supervised;
  std::optional<HmmWorld> own_world;
  if (is_hmm && world == nullptr) {
    own_world = build_hmm_world(spec.hmm, seed, spec.hmm_eval_fraction);
    world = &*own_world;
  }
  MetaDataset md;
  md.spec = spec;
  md.split = split;
  md.episodes.reserve(n_tasks);
  const std::uint64_t tag = split == Split::train ? seed_tag::train_split : seed_tag::eval_split;
  std::unordered_set<std::uint64_t> used;
  for (int i = 0; i < n_tasks; ++i) {
    std::uint64_t task_seed = derive_seed(seed, tag, static_cast<std::uint64_t>(i));
    for (std::uint64_t bump = 1; !used.insert(task_seed).second; ++bump) {
      task_seed = derive_seed(task_seed, tag, bump);
    }
    Rng rng(task_seed);
    Episode ep;
    if (is_hmm) {
      const auto& pool = split == Split::train ? world->train_latents : world->eval_latents;
      const HmmLatent& latent = pool[uniform_int(rng, 0, static_cast<int>(pool.size()) - 1)];
      const Hmm hmm = make_hmm(world->cycles, world->emissions, latent, world->hyper);
      ObservationSequence seq = sample_sequence(hmm, n_points, rng);
      seq.latent = latent;
      seq.seed = task_seed;
      ep = spec.family == Family::hmm ? hmm_episode(seq, spec.hmm) : hmm_to_supervised(seq, spec.hmm);
      ep.spec = spec;
    } else {
      const TaskParams params = sample_task_params(spec, rng);
      ep = make_episode(spec, params, n_points, rng);
    }
    ep.seed = task_seed;
    md.episodes.push_back(std::move(ep));
  }
  return md;
}

MetaDatasetPair make_meta_datasets(const TaskSpec& spec_in, int n_train, int n_eval,
                                   int train_points, int eval_points, std::uint64_t seed) {
  const TaskSpec spec = finalize_spec(spec_in, seed);
  MetaDatasetPair out;
  const HmmWorld* world = nullptr;
  if (spec.family == Family::hmm || spec.family == Family::hmm_supervised) {
    out.world = build_hmm_world(spec.hmm, seed, spec.hmm_eval_fraction);
    world = &*out.world;
  }
  out.train = make_meta_dataset(spec, n_train, train_points, seed, Split::train, world);
  out.eval = make_meta_dataset(spec, n_eval, eval_points, seed, Split::eval, world);
  return out;
}

Episode hmm_episode(const ObservationSequence& seq, const HmmHyper& hyper) {
  if (seq.tokens.empty()) throw std::invalid_argument("hmm_episode: empty sequence");
  Episode ep;
  ep.spec = TaskSpec::hidden_markov(hyper);
  ep.params = HmmParams{seq.latent};
  ep.seed = seq.seed;
  for (int tok : seq.tokens) {
    if (tok < 0 || tok >= hyper.n_obs) throw std::out_of_range("hmm_episode: token out of range");
    ep.points.push_back(DataPoint{{}, {}, {tok}});
  }
  return ep;
}

Episode hmm_to_supervised(const ObservationSequence& seq, const HmmHyper& hyper) {
  Episode ep = hmm_episode(seq, hyper);
  ep.spec.family = Family::hmm_supervised;
  ep.spec.input_dim = 1;
  for (std::size_t i = 0; i < ep.points.size(); ++i) {
    ep.points[i].x = {static_cast<double>(i + 1)};
  }
  return ep;
}

}  // namespace preq
