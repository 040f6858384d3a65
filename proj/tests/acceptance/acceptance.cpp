// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any fails. Pass criterion numbers to run a subset.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "preq/codec.hpp"
#include "preq/experiment.hpp"
#include "preq/gradcheck.hpp"
#include "preq/hmm.hpp"
#include "preq/llm_probe.hpp"
#include "preq/objectives.hpp"
#include "preq/preq_eval.hpp"
#include "preq/predictor.hpp"
#include "preq/rng.hpp"
#include "preq/sgd_baseline.hpp"
#include "preq/tasks.hpp"

using namespace preq;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f = "%.4f") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(f, v[i]);
  return s;
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "  .. %s\n", msg.c_str());
  std::fflush(stderr);
}

// ---------------------------------------------------------------------------
// 1

int multiset_common(const std::vector<int>& code, const std::vector<int>& guess) {
  std::map<int, int> a, b;
  for (int c : code) ++a[c];
  for (int g : guess) ++b[g];
  int n = 0;
  for (const auto& [sym, k] : a) n += std::min(k, b.count(sym) ? b[sym] : 0);
  return n;
}

Outcome mastermind_oracle() {
  const std::vector<int> code{0, 5, 2, 1, 3, 4, 2, 4};
  const std::vector<int> guess{0, 2, 1, 1, 0, 2, 0, 4};
  const MastermindResponse demo = mastermind_response(code, guess);
  int mismatches = 0;
  Rng rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const auto c = sample_mastermind_code(8, 6, rng);
    const auto g = sample_mastermind_code(8, 6, rng);
    int exact = 0;
    for (std::size_t k = 0; k < c.size(); ++k) exact += c[k] == g[k];
    const MastermindResponse r = mastermind_response(c, g);
    mismatches += r.exact != exact || r.common != multiset_common(c, g);
  }
  const bool demo_ok = demo.exact == 3 && demo.common == 5;
  return {demo_ok && mismatches == 0, "demo " + std::to_string(demo.exact) + " " + std::to_string(demo.common) +
                                          ", mismatches " + std::to_string(mismatches) + "/10000"};
}

// ---------------------------------------------------------------------------
// 2

Outcome hmm_combinatorics() {
  const HmmHyper h;
  // Base cycle, its direction and speed, one group per family, family direction
  // and speed; emission variant per state group and an observation shift.
  const std::uint64_t want_t = static_cast<std::uint64_t>(h.n_base_cycles) * 2 * h.n_base_speeds *
                               static_cast<std::uint64_t>(std::pow(h.n_group_per_family, h.n_cycle_families)) *
                               2 * h.n_family_speeds;
  const std::uint64_t want_e =
      static_cast<std::uint64_t>(std::pow(h.n_emission_per_group, h.n_emission_groups)) * h.n_emission_shift;
  const auto tl = enumerate_transition_latents(h);
  const auto el = enumerate_emission_latents(h);
  const auto all = enumerate_latents(h);
  const std::set<HmmLatent> distinct(all.begin(), all.end());

  Rng rng(5);
  const CycleBank cycles = build_cycle_bank(h, rng);
  const EmissionBank emissions = build_emission_bank(h, rng);
  double worst = 0.0;
  for (const HmmLatent& l : all) {
    const Hmm m = make_hmm(cycles, emissions, l, h);
    for (const Matrix* mat : {&m.A, &m.B}) {
      for (int r = 0; r < mat->rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < mat->cols; ++c) {
          if ((*mat)(r, c) < 0.0) worst = std::max(worst, 1.0);
          s += (*mat)(r, c);
        }
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
  }
  const bool ok = tl.size() == 512 && el.size() == 24 && want_t == 512 && want_e == 24 &&
                  all.size() == 512 * 24 && distinct.size() == all.size() && worst <= 1e-9;
  return {ok, "transition " + std::to_string(tl.size()) + ", emission " + std::to_string(el.size()) +
                  ", total " + std::to_string(all.size()) + " (distinct " + std::to_string(distinct.size()) +
                  "), max row-sum error " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------
// 3

std::uint64_t splitmix(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Distribution depends on the stream seed, the position and the last two symbols.
class MixModel : public codec::CausalModel {
 public:
  MixModel(std::uint64_t seed, int k, double temperature) : seed_(seed), k_(k), temp_(temperature) {}
  std::vector<double> next_distribution(std::span<const int> prefix) override {
    std::uint64_t s = seed_ ^ (prefix.size() % 17) * 0x100000001b3ULL;
    if (!prefix.empty()) s ^= static_cast<std::uint64_t>(prefix.back() + 1) * 0x9e37ULL;
    if (prefix.size() > 1) s ^= static_cast<std::uint64_t>(prefix[prefix.size() - 2] + 1) * 0x85ebca6bULL;
    std::vector<double> p(static_cast<std::size_t>(k_));
    double z = 0.0;
    for (double& v : p) {
      const double u = static_cast<double>(splitmix(s) >> 11) * 0x1.0p-53;
      z += (v = std::exp(temp_ * (u - 0.5)));
    }
    for (double& v : p) v /= z;
    return p;
  }

 private:
  std::uint64_t seed_;
  int k_;
  double temp_;
};

Outcome codec_roundtrip() {
  constexpr int kStreams = 1000;
  constexpr std::size_t kLength = 10000;
  int lossy = 0, over = 0, ideal_mismatch = 0;
  double max_eps = 0.0, max_slack = -1e300;
  for (int s = 0; s < kStreams; ++s) {
    const int k = 2 + s % 30;
    const double temp = 1.0 + (s % 7) * 3.0;
    MixModel model(static_cast<std::uint64_t>(s) * 7919 + 1, k, temp);
    std::uint64_t rs = 1000 + static_cast<std::uint64_t>(s);
    std::vector<int> symbols;
    symbols.reserve(kLength);
    std::vector<double> probs;
    probs.reserve(kLength);
    for (std::size_t t = 0; t < kLength; ++t) {
      const auto p = model.next_distribution(symbols);
      double u = static_cast<double>(splitmix(rs) >> 11) * 0x1.0p-53;
      int sym = k - 1;
      for (int j = 0; j < k; ++j) {
        u -= p[static_cast<std::size_t>(j)];
        if (u < 0) {
          sym = j;
          break;
        }
      }
      symbols.push_back(sym);
      probs.push_back(p[static_cast<std::size_t>(sym)]);
    }
    const codec::EncodeResult r = codec::encode(symbols, model);
    lossy += codec::decode(r.bits, model, symbols.size()) != symbols;
    const double bound = r.ideal_bits + 32 + static_cast<double>(kLength) * r.max_penalty;
    over += static_cast<double>(r.bits.length) > bound;
    max_slack = std::max(max_slack, static_cast<double>(r.bits.length) - r.ideal_bits);
    max_eps = std::max(max_eps, r.max_penalty);
    const double eval_bits = code_length_from_probs(probs).total_bits;
    ideal_mismatch += std::abs(codec::ideal_length(model, symbols) - eval_bits) > 1e-9;
    if (s % 200 == 199) progress("codec streams " + std::to_string(s + 1));
  }
  return {lossy == 0 && over == 0 && ideal_mismatch == 0,
          "lossy " + std::to_string(lossy) + ", over bound " + std::to_string(over) + ", ideal mismatch " +
              std::to_string(ideal_mismatch) + " of " + std::to_string(kStreams) + "; eps_q " +
              fmt("%.3e", max_eps) + " bits/symbol, max realized - ideal " + fmt("%.2f", max_slack) + " bits"};
}

// ---------------------------------------------------------------------------
// 4, 5

constexpr Arch kArchs[] = {Arch::bottleneck, Arch::dual_stream, Arch::recurrent};

LearnerConfig toy_config(Arch arch, const TaskSpec& spec) {
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
  return configure_io(c, spec);
}

Outcome gradients() {
  bool ok = true;
  std::string detail;
  for (Arch arch : kArchs) {
    double worst = 0.0;
    for (const TaskSpec& base : {TaskSpec::linear(2), TaskSpec::mastermind(3, 3)}) {
      const TaskSpec spec = finalize_spec(base, 1);
      const LearnerConfig c = toy_config(arch, spec);
      const SequenceLearner<double> l(c, init_params(c, 11).cast<double>());
      const Episode ep = make_meta_dataset(spec, 1, 7, 3, Split::train).episodes[0];
      const auto q = prequential_queries(ep.size());
      const GradCheckResult r = grad_check(l, ep, q, 64, 17);
      ok = ok && r.checked >= 64 && r.max_rel_error <= 1e-4;
      worst = std::max(worst, r.max_rel_error);
    }
    detail += std::string(detail.empty() ? "" : ", ") + std::string(to_string(arch)) + " " + fmt("%.2e", worst);
  }
  return {ok, "max relative error: " + detail};
}

std::vector<double> output_rows(const SequenceLearner<double>& l, const Episode& ep, std::span<const Query> q) {
  ad::Tape<double> t(false);
  auto p = l.bind(t);
  auto v = t.value(l.outputs(t, p, ep, q));
  return {v.begin(), v.end()};
}

Outcome causality() {
  std::mt19937 rng(77);
  std::normal_distribution<double> noise;
  int violations = 0, trials = 0;
  for (Arch arch : kArchs) {
    const TaskSpec spec = TaskSpec::linear(2);
    const LearnerConfig c = toy_config(arch, spec);
    const SequenceLearner<double> l(c, init_params(c, 4).cast<double>());
    const Episode ep = make_meta_dataset(spec, 1, 12, 9, Split::eval).episodes[0];
    const auto q = prequential_queries(ep.size());
    const auto base = output_rows(l, ep, q);
    const std::size_t w = base.size() / q.size();
    for (int trial = 0; trial < 100; ++trial) {
      ++trials;
      const std::size_t t = static_cast<std::size_t>(rng() % ep.size());
      Episode pert = ep;
      pert.points[t].y[0] += 3.0 * noise(rng) + 0.5;
      for (std::size_t j = t + 1; j < ep.size(); ++j) {
        pert.points[j].y[0] = 10.0 * noise(rng);
        for (double& x : pert.points[j].x) x = 10.0 * noise(rng);
      }
      const auto moved = output_rows(l, pert, q);
      bool same = true;
      for (std::size_t r = 0; r <= t; ++r) {
        for (std::size_t k = 0; k < w; ++k) same = same && moved[r * w + k] == base[r * w + k];
      }
      violations += !same;
    }
  }
  return {violations == 0, std::to_string(violations) + " violations in " + std::to_string(trials) + " trials"};
}

// ---------------------------------------------------------------------------
// Desk-scale meta-training

LearnerConfig desk_config(const TaskSpec& spec, int max_context, OutputKind out = OutputKind::gaussian_mean) {
  LearnerConfig c;
  c.arch = Arch::bottleneck;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_model = 64;
  c.d_ff = 128;
  c.d_bottleneck = 32;
  c.head_depth = 5;
  c.head_width = 64;
  c.max_context = max_context;
  c.output_kind = out;
  return configure_io(c, spec);
}

TrainConfig desk_train(int epochs, std::uint64_t seed) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.batch_size = 32;
  t.epochs = epochs;
  t.seed = seed;
  return t;
}

std::shared_ptr<SequenceLearner<float>> train_desk(const LearnerConfig& c, const MetaDataset& data,
                                                   const ObjectiveSpec& o, int epochs, std::uint64_t seed,
                                                   const std::string& label) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = meta_train(c, data, o, desk_train(epochs, seed));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  progress(label + " seed " + std::to_string(seed) + ": loss " + fmt("%.4f", r.trace.front().mean_loss) + " -> " +
           fmt("%.4f", r.trace.back().mean_loss) + " in " + fmt("%.0f", secs) + " s");
  return std::make_shared<SequenceLearner<float>>(std::move(r.learner));
}

ObjectiveSpec objective(ObjectiveKind k, ErrorKind loss, double suffix_fraction = 0.5) {
  ObjectiveSpec o;
  o.kind = k;
  o.loss = loss;
  o.suffix_fraction = suffix_fraction;
  return o;
}

// ---------------------------------------------------------------------------
// 6

Outcome sinusoid_ordering() {
  constexpr int kEpochs = 60;
  const std::vector<int> grid{0, 1, 2, 4, 6, 8, 12, 16, 24, 32, 48, 56, 64};
  std::vector<PrequentialCurve> pq, tr;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TaskSpec spec = finalize_spec(TaskSpec::sinusoid(), seed);
    const MetaDatasetPair d = make_meta_datasets(spec, 2000, 200, 65, 80, seed);
    const LearnerConfig c = desk_config(spec, 80);
    for (auto kind : {ObjectiveKind::prequential, ObjectiveKind::train_risk}) {
      const auto l = train_desk(c, d.train, objective(kind, ErrorKind::mse), kEpochs, seed,
                                "sinusoid " + std::string(to_string(kind)));
      const LearnerPredictor pred(l, std::string(to_string(kind)));
      (kind == ObjectiveKind::prequential ? pq : tr).push_back(eval_curve(pred, d.eval, grid));
    }
  }
  const PrequentialCurve a = combine_seeds(pq), b = combine_seeds(tr);
  bool small_ok = true, large_ok = true;
  double worst_rel = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] <= 8) small_ok = small_ok && a.mean_error[i] < b.mean_error[i];
    if (grid[i] >= 48) {
      const double rel = std::abs(b.mean_error[i] - a.mean_error[i]) / a.mean_error[i];
      worst_rel = std::max(worst_rel, rel);
      large_ok = large_ok && rel <= 0.15;
    }
  }
  return {small_ok && large_ok, std::string("prequential below train-risk at <= 8: ") + (small_ok ? "yes" : "no") +
                                    "; max relative difference at >= 48: " + fmt("%.3f", worst_rel) +
                                    "\n      prequential: " + join(a.mean_error) +
                                    "\n      train-risk:  " + join(b.mean_error)};
}

// ---------------------------------------------------------------------------
// 7

Outcome weight_decay_ordering() {
  constexpr int kPrefix = 20, kHeldOut = 100, kTasks = 10, kSeeds = 15;
  int wins = 0;
  double m0 = 0.0, m1 = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const MetaDataset d =
        make_meta_dataset(TaskSpec::linear(), kTasks, kPrefix + kHeldOut, 500 + static_cast<std::uint64_t>(seed),
                          Split::eval);
    double err[2] = {0.0, 0.0};
    for (int k = 0; k < 2; ++k) {
      BaselineConfig c;
      c.early_stopping = false;
      c.max_epochs = 1000;
      c.weight_decay = k ? 0.05 : 0.0;
      c.seed = static_cast<std::uint64_t>(seed);
      for (const Episode& ep : d.episodes) {
        const FittedMlp f = fit_mlp(std::span(ep.points).first(kPrefix), d.spec, c);
        for (std::size_t i = kPrefix; i < ep.size(); ++i) {
          err[k] += prediction_loss(f.predict(ep.points[i].x), ep.points[i], ErrorKind::mse) / (kHeldOut * kTasks);
        }
      }
    }
    wins += err[1] < err[0];
    m0 += err[0] / kSeeds;
    m1 += err[1] / kSeeds;
  }
  return {wins >= 12 && m1 < m0, "held-out MSE lambda=0 " + fmt("%.4f", m0) + ", lambda=0.05 " + fmt("%.4f", m1) +
                                     "; decay better in " + std::to_string(wins) + "/15 seeds"};
}

// ---------------------------------------------------------------------------
// 8

Outcome suffix_ordering() {
  constexpr int kLength = 64, kEpochs = 20, kBin = 8;
  std::vector<int> grid(kLength);
  for (int i = 0; i < kLength; ++i) grid[static_cast<std::size_t>(i)] = i;
  std::vector<PrequentialCurve> full, half;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TaskSpec spec = finalize_spec(TaskSpec::hidden_markov(), seed);
    const MetaDatasetPair d = make_meta_datasets(spec, 2000, 1000, kLength, kLength, seed);
    const LearnerConfig c = desk_config(spec, kLength + 2, OutputKind::categorical_multi);
    EvalOptions opts;
    opts.mode = EvalMode::next_point;
    for (double f : {1.0, 0.5}) {
      const auto l = train_desk(c, d.train, objective(ObjectiveKind::suffix_only, ErrorKind::cross_entropy, f),
                                kEpochs, seed, "hmm suffix " + fmt("%.1f", f));
      const LearnerPredictor pred(l, "suffix");
      (f == 1.0 ? full : half).push_back(eval_curve(pred, d.eval, grid, opts));
    }
  }
  const PrequentialCurve gap = gap_curve(combine_seeds(half), combine_seeds(full));
  bool below_ok = true;
  for (int t = 0; t < kLength / 2; ++t) below_ok = below_ok && gap.mean_error[static_cast<std::size_t>(t)] > 0.0;
  std::vector<double> bins;
  for (int lo = kLength / 2; lo < kLength; lo += kBin) {
    double s = 0.0;
    for (int t = lo; t < lo + kBin; ++t) s += gap.mean_error[static_cast<std::size_t>(t)];
    bins.push_back(s / kBin);
  }
  bool shrink_ok = true;
  for (std::size_t i = 1; i < bins.size(); ++i) shrink_ok = shrink_ok && std::abs(bins[i]) < std::abs(bins[i - 1]);
  double below_mean = 0.0;
  for (int t = 0; t < kLength / 2; ++t) below_mean += gap.mean_error[static_cast<std::size_t>(t)] / (kLength / 2);
  return {below_ok && shrink_ok,
          std::string("suffix worse at every context < ") + std::to_string(kLength / 2) + ": " +
              (below_ok ? "yes" : "no") + " (mean gap " + fmt("%.4f", below_mean) + " nats); binned gap above: " +
              join(bins) + (shrink_ok ? " (shrinking)" : " (not monotone)")};
}

// ---------------------------------------------------------------------------
// 9

class UniformSix : public Predictor {
 public:
  std::vector<Prediction> predict(const Episode&, std::span<const Query> queries) const override {
    return std::vector<Prediction>(queries.size(), Prediction{{}, {std::vector<double>(6, 1.0 / 6)}});
  }
  std::string name() const override { return "uniform"; }
};

Outcome closed_forms() {
  const std::vector<double> probs(100, 1.0 / 6);
  const double bits = code_length_from_probs(probs).total_bits;
  const bool bits_ok = std::abs(bits - 258.50) <= 0.01;

  std::vector<DataPoint> ctx(5);
  const int first[] = {0, 2, 0, 1, 0};
  const int second[] = {1, 1, 1, 1, 2};
  for (int i = 0; i < 5; ++i) ctx[static_cast<std::size_t>(i)].labels = {first[i], second[i]};
  const Prediction p = marginal_baseline(ctx, 2, 3);
  // Add-one counts: first label {3, 1, 1} + 1, second {0, 4, 1} + 1, over 8.
  const std::vector<double> want0{4.0 / 8, 2.0 / 8, 2.0 / 8}, want1{1.0 / 8, 5.0 / 8, 2.0 / 8};
  const bool marginal_ok = p.probs.size() == 2 && p.probs[0] == want0 && p.probs[1] == want1;
  return {bits_ok && marginal_ok, "uniform-over-6, 100 tokens: " + fmt("%.4f", bits) + " bits; marginal counts " +
                                      (marginal_ok ? "exact" : "wrong")};
}

// ---------------------------------------------------------------------------
// 10

Outcome chebyshev_mechanism() {
  constexpr int kEpochs = 100, kPoints = 33, kContext = 15, kEval = 50;
  double norm[2] = {0.0, 0.0};
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TaskSpec spec = TaskSpec::chebyshev(1, 8);
    const MetaDatasetPair d = make_meta_datasets(spec, 2000, kEval, kPoints, kContext + 1, seed);
    const LearnerConfig c = desk_config(spec, kPoints + 2, OutputKind::chebyshev);
    double s[2] = {0.0, 0.0};
    int k = 0;
    for (auto kind : {ObjectiveKind::prequential, ObjectiveKind::train_risk}) {
      const auto l = train_desk(c, d.train, objective(kind, ErrorKind::mse), kEpochs, seed,
                                "chebyshev " + std::string(to_string(kind)));
      const LearnerPredictor pred(l, "cheb");
      for (const Episode& ep : d.eval.episodes) {
        s[k] += excess_degree_norm(*pred.coefficients(ep, kContext), spec.gen_degree) / kEval;
      }
      norm[k] += s[k] / 3;
      ++k;
    }
    per_seed += " " + fmt("%.4f", s[0]) + "/" + fmt("%.4f", s[1]);
  }
  return {norm[1] > norm[0], "mean excess-degree norm prequential " + fmt("%.4f", norm[0]) + ", train-risk " +
                                 fmt("%.4f", norm[1]) + " (per seed pq/tr:" + per_seed + ")"};
}

// ---------------------------------------------------------------------------
// 11

Outcome probe_offline() {
  const MetaDataset d = make_meta_dataset(TaskSpec::mastermind(), 10, 20, 3, Split::eval);
  const std::vector<int> grid{0, 1, 2, 4, 8, 16};
  probe::ProbeConfig cfg;
  cfg.endpoint = "http://unreachable.invalid";
  probe::OracleBackend oracle;
  probe::UniformBackend uniform;
  const PrequentialCurve co = probe::probe_curve(oracle, d, grid, cfg);
  const PrequentialCurve cu = probe::probe_curve(uniform, d, grid, cfg);
  double worst_oracle = 0.0, worst_uniform = 0.0;
  for (double v : co.mean_error) worst_oracle = std::max(worst_oracle, v);
  for (double v : cu.mean_error) worst_uniform = std::max(worst_uniform, std::abs(v - std::log(81.0)));
  return {worst_oracle < 1e-6 && worst_uniform <= 1e-6,
          "oracle max " + fmt("%.2e", worst_oracle) + " nats, uniform max |err - ln 81| " + fmt("%.2e", worst_uniform)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "Mastermind oracle", mastermind_oracle},
      {2, "HMM combinatorics", hmm_combinatorics},
      {3, "codec roundtrip and length bound", codec_roundtrip},
      {4, "gradient correctness", gradients},
      {5, "causality", causality},
      {6, "sinusoid prequential vs train-risk", sinusoid_ordering},
      {7, "weight decay ordering", weight_decay_ordering},
      {8, "suffix-only vs full training on HMM", suffix_ordering},
      {9, "closed-form code lengths", closed_forms},
      {10, "Chebyshev excess-degree norm", chebyshev_mechanism},
      {11, "offline probe pipeline", probe_offline},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("[%s] %2d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
