#pragma once

// In-context learner architectures. Each maps a context prefix D_{1:c} and a
// query input x_q to a predictive distribution for y_q:
//
//   bottleneck   causal transformer -> per-position summary z_c (d_bottleneck)
//                -> MLP head on [z_c, x_q]
//   dual_stream  context stream D and query stream X; X rows attend to D under
//                a per-row prefix limit, so a query never sees its own label
//   recurrent    gated recurrence -> per-position summary -> MLP head
//
// A head of kind `chebyshev` has no parameters: z_c holds Chebyshev
// coefficients and the prediction is sum_i z_c[i] C_i(x_q).

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "preq/autodiff.hpp"
#include "preq/tasks.hpp"

namespace preq {

enum class Arch { bottleneck, dual_stream, recurrent };
enum class OutputKind { gaussian_mean, categorical_multi, chebyshev };
enum class Positional { learned_absolute, relative };
enum class XEncoding { raw, one_hot_digits, time_index };

std::string_view to_string(Arch a);
Arch arch_from_string(std::string_view s);
std::string_view to_string(OutputKind k);
OutputKind output_kind_from_string(std::string_view s);
std::string_view to_string(Positional p);
Positional positional_from_string(std::string_view s);

struct LearnerConfig {
  Arch arch = Arch::bottleneck;
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 256;
  int d_ff = 512;
  int d_bottleneck = 128;
  int head_depth = 5;  // linear layers in the prediction head
  int head_width = 256;
  OutputKind output_kind = OutputKind::gaussian_mean;
  int max_context = 1000;
  Positional positional = Positional::learned_absolute;
  int rel_span = 64;

  // Task interface, filled by configure_io.
  XEncoding x_encoding = XEncoding::raw;
  int x_dim = 0;
  int x_alphabet = 0;
  int y_dim = 0;
  int n_labels = 0;
  int n_classes = 0;

  [[nodiscard]] int x_features() const;
  [[nodiscard]] int y_features() const;
  [[nodiscard]] int token_width() const { return x_features() + y_features(); }
  [[nodiscard]] int output_width() const;

  void validate() const;
  bool operator==(const LearnerConfig&) const = default;
};

// Adapts the config's IO fields (and output kind, unless chebyshev) to a task.
LearnerConfig configure_io(LearnerConfig config, const TaskSpec& spec);

// Token payloads before embedding.
struct TokenMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
};

std::vector<double> featurize_x(const LearnerConfig& config, std::span<const double> x);
std::vector<double> featurize_y(const LearnerConfig& config, const DataPoint& point);

// Row 0 is the all-zero empty-context sentinel; row t is [x_t, y_t] for t = 1..n.
TokenMatrix encode_tokens(const Episode& episode, const LearnerConfig& config,
                          std::size_t n_points);
TokenMatrix encode_tokens(const Episode& episode, const LearnerConfig& config);

template <class T>
struct ParamTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<T> data;
};

template <class T>
class ParamSet {
 public:
  int add(std::string name, int rows, int cols);
  [[nodiscard]] int index(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const { return lookup_.count(name) > 0; }
  [[nodiscard]] std::size_t count() const { return tensors_.size(); }
  [[nodiscard]] std::size_t total_size() const;
  ParamTensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const ParamTensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  [[nodiscard]] const std::vector<ParamTensor<T>>& tensors() const { return tensors_; }

  // Flat views in tensor order.
  [[nodiscard]] std::vector<T> flatten() const;
  void assign_flat(std::span<const T> flat);

  template <class U>
  [[nodiscard]] ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& t : tensors_) {
      out.add(t.name, t.rows, t.cols);
      auto& dst = out[out.count() - 1].data;
      for (std::size_t i = 0; i < t.data.size(); ++i) dst[i] = static_cast<U>(t.data[i]);
    }
    return out;
  }

 private:
  std::vector<ParamTensor<T>> tensors_;
  std::map<std::string, int> lookup_;
};

// (context c, query index q): predict y_q from D_{1:c} and x_q. Indices are 0-based
// into episode.points; c counts observed points.
struct Query {
  std::size_t context = 0;
  std::size_t index = 0;
  bool operator==(const Query&) const = default;
};

template <class T>
class SequenceLearner {
 public:
  SequenceLearner() = default;
  SequenceLearner(LearnerConfig config, std::uint64_t init_seed);
  SequenceLearner(LearnerConfig config, ParamSet<T> params);

  [[nodiscard]] const LearnerConfig& config() const { return config_; }
  [[nodiscard]] const ParamSet<T>& params() const { return params_; }
  ParamSet<T>& params() { return params_; }

  // Parameters bound as tape leaves, in ParamSet order.
  struct Bound {
    std::vector<ad::Var> vars;
    ad::Var operator[](int i) const { return vars[static_cast<std::size_t>(i)]; }
  };
  Bound bind(ad::Tape<T>& tape) const;

  // Per-position context summaries, (rows + 1) x d_bottleneck: row c summarizes the
  // first c data tokens. Bottleneck and recurrent architectures only.
  ad::Var context_states(ad::Tape<T>& tape, const Bound& p, const TokenMatrix& tokens) const;

  // Head on [state, x features] rows (or polynomial evaluation for chebyshev heads).
  ad::Var head(ad::Tape<T>& tape, const Bound& p, ad::Var states,
               std::span<const std::vector<double>> x_query) const;

  // X row r holds x_query[r] and sees D rows 0..visible[r] (D row 0 is the sentinel).
  ad::Var dual_stream(ad::Tape<T>& tape, const Bound& p, const TokenMatrix& tokens,
                      std::span<const std::vector<double>> x_query,
                      std::span<const int> visible) const;

  // Raw outputs for each query: means, logits, or polynomial values.
  ad::Var outputs(ad::Tape<T>& tape, const Bound& p, const Episode& episode,
                  std::span<const Query> queries) const;

  // Summed per-query loss (MSE or cross-entropy), weighted per query if given.
  ad::Var loss(ad::Tape<T>& tape, ad::Var outputs, const Episode& episode,
               std::span<const Query> queries, std::span<const T> weights = {}) const;

 private:
  ad::Var embed(ad::Tape<T>& tape, const Bound& p, const TokenMatrix& tokens) const;
  ad::Var transformer_block(ad::Tape<T>& tape, const Bound& p, int layer, ad::Var d,
                            const ad::AttentionSpec& self_mask) const;
  ad::Var recurrent_states(ad::Tape<T>& tape, const Bound& p, const TokenMatrix& tokens) const;

  LearnerConfig config_;
  ParamSet<T> params_;
};

ParamSet<float> init_params(const LearnerConfig& config, std::uint64_t seed);

// Spec-facing wrappers over SequenceLearner, run on a fresh non-recording tape.
std::vector<std::vector<double>> bottleneck_forward(const SequenceLearner<double>& learner,
                                                    const TokenMatrix& tokens);
std::vector<std::vector<double>> recurrent_forward(const SequenceLearner<double>& learner,
                                                   const TokenMatrix& tokens);
// tokens: sentinel + N data tokens; x_query: N query inputs aligned with data tokens.
std::vector<std::vector<double>> dualstream_forward(const SequenceLearner<double>& learner,
                                                    const TokenMatrix& tokens,
                                                    std::span<const std::vector<double>> x_query);

// Mask helpers (1 = may attend), indexed by aligned position t = 1..n for X and
// t = 0..n for D.
std::vector<std::vector<int>> query_stream_mask(int n);
std::vector<std::vector<int>> context_stream_mask(int n);

}  // namespace preq
