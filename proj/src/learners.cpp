#include "preq/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "preq/rng.hpp"

namespace preq {

namespace {

template <class E>
E parse_enum(std::string_view s, std::initializer_list<E> all, const char* what) {
  for (E e : all) {
    if (to_string(e) == s) return e;
  }
  throw std::invalid_argument(std::string("unknown ") + what + ": " + std::string(s));
}

std::string layer_name(int l, const char* field) {
  return "L" + std::to_string(l) + "." + field;
}

std::string rnn_name(int l, const char* field) {
  return "R" + std::to_string(l) + "." + field;
}

std::string head_name(int i, const char* field) {
  return "head" + std::to_string(i) + "." + field;
}

bool has_mlp_head(const LearnerConfig& c) {
  return c.arch != Arch::dual_stream && c.output_kind != OutputKind::chebyshev;
}

}  // namespace

std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::bottleneck: return "bottleneck";
    case Arch::dual_stream: return "dual_stream";
    case Arch::recurrent: return "recurrent";
  }
  return "?";
}

Arch arch_from_string(std::string_view s) {
  return parse_enum(s, {Arch::bottleneck, Arch::dual_stream, Arch::recurrent}, "architecture");
}

std::string_view to_string(OutputKind k) {
  switch (k) {
    case OutputKind::gaussian_mean: return "gaussian_mean";
    case OutputKind::categorical_multi: return "categorical_multi";
    case OutputKind::chebyshev: return "chebyshev";
  }
  return "?";
}

OutputKind output_kind_from_string(std::string_view s) {
  return parse_enum(s, {OutputKind::gaussian_mean, OutputKind::categorical_multi,
                        OutputKind::chebyshev},
                    "output kind");
}

std::string_view to_string(Positional p) {
  switch (p) {
    case Positional::learned_absolute: return "learned_absolute";
    case Positional::relative: return "relative";
  }
  return "?";
}

Positional positional_from_string(std::string_view s) {
  return parse_enum(s, {Positional::learned_absolute, Positional::relative}, "positional");
}

int LearnerConfig::x_features() const {
  switch (x_encoding) {
    case XEncoding::raw: return x_dim;
    case XEncoding::one_hot_digits: return x_dim * x_alphabet;
    case XEncoding::time_index: return 1;
  }
  return 0;
}

int LearnerConfig::y_features() const {
  return output_kind == OutputKind::categorical_multi ? n_labels * n_classes : y_dim;
}

int LearnerConfig::output_width() const {
  switch (output_kind) {
    case OutputKind::gaussian_mean: return y_dim;
    case OutputKind::categorical_multi: return n_labels * n_classes;
    case OutputKind::chebyshev: return 1;
  }
  return 0;
}

void LearnerConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("LearnerConfig: " + m); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (n_heads < 1 || d_model < 1 || d_model % n_heads != 0) {
    fail("d_model must be a positive multiple of n_heads");
  }
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (d_bottleneck < 1 || d_bottleneck > d_model) fail("d_bottleneck must be in [1, d_model]");
  if (head_depth < 1 || head_width < 1) fail("head_depth and head_width must be >= 1");
  if (max_context < 1) fail("max_context must be >= 1");
  if (positional == Positional::relative && rel_span < 1) fail("rel_span must be >= 1");
  if (token_width() < 1) fail("tokens have no features; call configure_io first");
  if (output_width() < 1) fail("empty output");
  if (output_kind == OutputKind::categorical_multi && (n_labels < 1 || n_classes < 2)) {
    fail("categorical output needs labels and >= 2 classes");
  }
  if (output_kind == OutputKind::chebyshev && (x_dim != 1 || y_dim != 1)) {
    fail("chebyshev head needs scalar x and y");
  }
  if (x_encoding == XEncoding::one_hot_digits && x_alphabet < 1) fail("x_alphabet must be >= 1");
}

LearnerConfig configure_io(LearnerConfig c, const TaskSpec& spec) {
  const IoShape io = io_shape(spec);
  c.x_dim = io.x_dim;
  c.x_alphabet = 0;
  c.x_encoding = XEncoding::raw;
  if (spec.family == Family::mastermind) {
    c.x_encoding = XEncoding::one_hot_digits;
    c.x_alphabet = spec.alphabet_size;
  } else if (spec.family == Family::hmm_supervised) {
    c.x_encoding = XEncoding::time_index;
    c.positional = Positional::relative;
  }
  c.y_dim = io.y_dim;
  c.n_labels = io.n_labels;
  c.n_classes = io.n_classes;
  if (c.output_kind == OutputKind::chebyshev) {
    if (spec.family != Family::chebyshev) {
      throw std::invalid_argument("configure_io: chebyshev head needs the chebyshev family");
    }
    c.d_bottleneck = spec.basis_size;
  } else {
    c.output_kind = io.categorical() ? OutputKind::categorical_multi : OutputKind::gaussian_mean;
  }
  return c;
}

std::vector<double> featurize_x(const LearnerConfig& config, std::span<const double> x) {
  if (static_cast<int>(x.size()) != config.x_dim) {
    throw std::invalid_argument("featurize_x: input has " + std::to_string(x.size()) +
                                " dims, expected " + std::to_string(config.x_dim));
  }
  switch (config.x_encoding) {
    case XEncoding::raw: return {x.begin(), x.end()};
    case XEncoding::one_hot_digits: {
      std::vector<double> out(static_cast<std::size_t>(config.x_features()), 0.0);
      for (int i = 0; i < config.x_dim; ++i) {
        const int digit = static_cast<int>(x[static_cast<std::size_t>(i)]);
        if (digit < 0 || digit >= config.x_alphabet) {
          throw std::out_of_range("featurize_x: digit out of range");
        }
        out[static_cast<std::size_t>(i * config.x_alphabet + digit)] = 1.0;
      }
      return out;
    }
    case XEncoding::time_index:
      return {x[0] / static_cast<double>(config.max_context)};
  }
  return {};
}

std::vector<double> featurize_y(const LearnerConfig& config, const DataPoint& point) {
  if (config.output_kind != OutputKind::categorical_multi) {
    if (static_cast<int>(point.y.size()) != config.y_dim) {
      throw std::invalid_argument("featurize_y: wrong output dimension");
    }
    return point.y;
  }
  if (static_cast<int>(point.labels.size()) != config.n_labels) {
    throw std::invalid_argument("featurize_y: wrong label count");
  }
  std::vector<double> out(static_cast<std::size_t>(config.y_features()), 0.0);
  for (int l = 0; l < config.n_labels; ++l) {
    const int c = point.labels[static_cast<std::size_t>(l)];
    if (c < 0 || c >= config.n_classes) throw std::out_of_range("featurize_y: label out of range");
    out[static_cast<std::size_t>(l * config.n_classes + c)] = 1.0;
  }
  return out;
}

TokenMatrix encode_tokens(const Episode& episode, const LearnerConfig& config,
                          std::size_t n_points) {
  if (n_points > episode.size()) throw std::out_of_range("encode_tokens: not enough points");
  TokenMatrix m;
  m.rows = static_cast<int>(n_points) + 1;
  m.cols = config.token_width();
  m.data.assign(static_cast<std::size_t>(m.rows) * m.cols, 0.0);
  for (std::size_t t = 0; t < n_points; ++t) {
    const DataPoint& p = episode.points[t];
    auto fx = featurize_x(config, p.x);
    auto fy = featurize_y(config, p);
    double* row = m.data.data() + (t + 1) * static_cast<std::size_t>(m.cols);
    std::copy(fx.begin(), fx.end(), row);
    std::copy(fy.begin(), fy.end(), row + fx.size());
  }
  return m;
}

TokenMatrix encode_tokens(const Episode& episode, const LearnerConfig& config) {
  if (episode.size() == 0) throw std::invalid_argument("encode_tokens: empty episode");
  return encode_tokens(episode, config, episode.size());
}

// ---------------------------------------------------------------------------
// ParamSet

template <class T>
int ParamSet<T>::add(std::string name, int rows, int cols) {
  if (lookup_.count(name)) throw std::invalid_argument("ParamSet: duplicate tensor " + name);
  if (rows < 1 || cols < 1) throw std::invalid_argument("ParamSet: empty tensor " + name);
  const int id = static_cast<int>(tensors_.size());
  lookup_[name] = id;
  tensors_.push_back({std::move(name), rows, cols,
                      std::vector<T>(static_cast<std::size_t>(rows) * cols, T(0))});
  return id;
}

template <class T>
int ParamSet<T>::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw std::out_of_range("ParamSet: no tensor " + name);
  return it->second;
}

template <class T>
std::size_t ParamSet<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.data.size();
  return n;
}

template <class T>
std::vector<T> ParamSet<T>::flatten() const {
  std::vector<T> out;
  out.reserve(total_size());
  for (const auto& t : tensors_) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

template <class T>
void ParamSet<T>::assign_flat(std::span<const T> flat) {
  if (flat.size() != total_size()) throw std::invalid_argument("ParamSet: flat size mismatch");
  std::size_t off = 0;
  for (auto& t : tensors_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.data.size(), t.data.begin());
    off += t.data.size();
  }
}

template class ParamSet<float>;
template class ParamSet<double>;

// ---------------------------------------------------------------------------
// Initialization

ParamSet<float> init_params(const LearnerConfig& c, std::uint64_t seed) {
  c.validate();
  ParamSet<float> ps;
  Rng rng(derive_seed(seed, seed_tag::init));
  auto normal = [&](const std::string& name, int rows, int cols, double sd) {
    auto& t = ps[static_cast<std::size_t>(ps.add(name, rows, cols))];
    for (auto& v : t.data) v = static_cast<float>(sd * standard_normal(rng));
  };
  auto fill = [&](const std::string& name, int rows, int cols, float value) {
    auto& t = ps[static_cast<std::size_t>(ps.add(name, rows, cols))];
    std::fill(t.data.begin(), t.data.end(), value);
  };
  const int d = c.d_model;
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double depth_scale = 1.0 / std::sqrt(2.0 * c.n_layers);

  normal("embed.w", c.token_width(), d, 1.0 / std::sqrt(static_cast<double>(c.token_width())));
  // Nonzero so the all-zero sentinel token does not sit at a layer-norm singularity.
  normal("embed.b", 1, d, 1.0 / std::sqrt(static_cast<double>(c.token_width())));
  if (c.arch != Arch::recurrent && c.positional == Positional::learned_absolute) {
    normal("pos", c.max_context + 2, d, 0.02);
  }
  if (c.arch == Arch::dual_stream) {
    if (c.x_features() > 0) {
      normal("xembed.w", c.x_features(), d, 1.0 / std::sqrt(static_cast<double>(c.x_features())));
    }
    fill("xembed.b", 1, d, 0.0f);
  }
  for (int l = 0; l < c.n_layers; ++l) {
    if (c.arch == Arch::recurrent) {
      normal(rnn_name(l, "wx"), d, 3 * d, inv_d);
      fill(rnn_name(l, "bx"), 1, 3 * d, 0.0f);
      normal(rnn_name(l, "wh"), d, 3 * d, inv_d);
      fill(rnn_name(l, "bh"), 1, 3 * d, 0.0f);
      continue;
    }
    fill(layer_name(l, "ln1.g"), 1, d, 1.0f);
    fill(layer_name(l, "ln1.b"), 1, d, 0.0f);
    normal(layer_name(l, "wq"), d, d, inv_d);
    fill(layer_name(l, "bq"), 1, d, 0.0f);
    normal(layer_name(l, "wkv"), d, 2 * d, inv_d);
    fill(layer_name(l, "bkv"), 1, 2 * d, 0.0f);
    normal(layer_name(l, "wo"), d, d, inv_d * depth_scale);
    fill(layer_name(l, "bo"), 1, d, 0.0f);
    fill(layer_name(l, "ln2.g"), 1, d, 1.0f);
    fill(layer_name(l, "ln2.b"), 1, d, 0.0f);
    normal(layer_name(l, "w1"), d, c.d_ff, inv_d);
    fill(layer_name(l, "b1"), 1, c.d_ff, 0.0f);
    normal(layer_name(l, "w2"), c.d_ff, d, depth_scale / std::sqrt(static_cast<double>(c.d_ff)));
    fill(layer_name(l, "b2"), 1, d, 0.0f);
    if (c.positional == Positional::relative) normal(layer_name(l, "rel"), c.n_heads, c.rel_span, 0.02);
  }
  fill("lnf.g", 1, d, 1.0f);
  fill("lnf.b", 1, d, 0.0f);
  if (c.arch == Arch::dual_stream) {
    const int out = c.output_kind == OutputKind::chebyshev ? c.d_bottleneck : c.output_width();
    normal("out.w", d, out, inv_d);
    fill("out.b", 1, out, 0.0f);
  } else {
    normal("proj.w", d, c.d_bottleneck, inv_d);
    fill("proj.b", 1, c.d_bottleneck, 0.0f);
  }
  if (has_mlp_head(c)) {
    int in = c.d_bottleneck + c.x_features();
    for (int i = 0; i < c.head_depth; ++i) {
      const bool last = i == c.head_depth - 1;
      const int out = last ? c.output_width() : c.head_width;
      const double sd = last ? 1.0 / std::sqrt(static_cast<double>(in))
                             : std::sqrt(2.0 / static_cast<double>(in));
      normal(head_name(i, "w"), in, out, sd);
      fill(head_name(i, "b"), 1, out, 0.0f);
      in = out;
    }
  }
  return ps;
}

// ---------------------------------------------------------------------------
// SequenceLearner

template <class T>
SequenceLearner<T>::SequenceLearner(LearnerConfig config, std::uint64_t init_seed)
    : config_(std::move(config)), params_(init_params(config_, init_seed).template cast<T>()) {}

template <class T>
SequenceLearner<T>::SequenceLearner(LearnerConfig config, ParamSet<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const ParamSet<float> layout = init_params(config_, 0);
  if (layout.count() != params_.count()) {
    throw std::invalid_argument("SequenceLearner: parameter layout does not match config");
  }
  for (std::size_t i = 0; i < layout.count(); ++i) {
    const auto& a = layout[i];
    const auto& b = params_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) {
      throw std::invalid_argument("SequenceLearner: tensor " + b.name + " does not match config");
    }
    for (T v : b.data) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw std::invalid_argument("SequenceLearner: non-finite weight in " + b.name);
      }
    }
  }
}

template <class T>
typename SequenceLearner<T>::Bound SequenceLearner<T>::bind(ad::Tape<T>& tape) const {
  Bound b;
  b.vars.reserve(params_.count());
  for (const auto& t : params_.tensors()) {
    b.vars.push_back(tape.param(t.rows, t.cols, std::span<const T>(t.data)));
  }
  return b;
}

namespace {

template <class T>
ad::Var constant_from(ad::Tape<T>& tape, int rows, int cols, std::span<const double> data) {
  return tape.constant(rows, cols, std::vector<T>(data.begin(), data.end()));
}

template <class T>
ad::Var feature_rows(ad::Tape<T>& tape, std::span<const std::vector<double>> rows, int width) {
  std::vector<T> flat;
  flat.reserve(rows.size() * static_cast<std::size_t>(width));
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != width) throw std::invalid_argument("query feature width mismatch");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return tape.constant(static_cast<int>(rows.size()), width, std::move(flat));
}

std::vector<int> iota_vec(int n, int start = 0) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), start);
  return v;
}

}  // namespace

template <class T>
ad::Var SequenceLearner<T>::embed(ad::Tape<T>& tape, const Bound& p,
                                  const TokenMatrix& tokens) const {
  if (tokens.cols != config_.token_width()) {
    throw std::invalid_argument("token width does not match config");
  }
  if (tokens.rows < 1) throw std::invalid_argument("no tokens (sentinel missing)");
  ad::Var x = constant_from<T>(tape, tokens.rows, tokens.cols, tokens.data);
  ad::Var e = ad::linear(tape, x, p[params_.index("embed.w")], p[params_.index("embed.b")]);
  if (config_.arch != Arch::recurrent && config_.positional == Positional::learned_absolute) {
    const auto idx = iota_vec(tokens.rows);
    e = ad::add(tape, e, ad::gather_rows(tape, p[params_.index("pos")], std::span<const int>(idx)));
  }
  return e;
}

template <class T>
ad::Var SequenceLearner<T>::transformer_block(ad::Tape<T>& tape, const Bound& p, int l, ad::Var d,
                                              const ad::AttentionSpec& mask) const {
  auto P = [&](const char* f) { return p[params_.index(layer_name(l, f))]; };
  const int dm = config_.d_model;
  ad::Var rel = config_.positional == Positional::relative ? P("rel") : ad::Var{};
  ad::Var h = ad::layer_norm(tape, d, P("ln1.g"), P("ln1.b"));
  ad::Var q = ad::linear(tape, h, P("wq"), P("bq"));
  ad::Var kv = ad::linear(tape, h, P("wkv"), P("bkv"));
  ad::Var k = ad::slice_cols(tape, kv, 0, dm);
  ad::Var v = ad::slice_cols(tape, kv, dm, 2 * dm);
  ad::Var a = ad::attention(tape, q, k, v, mask, rel);
  d = ad::add(tape, d, ad::linear(tape, a, P("wo"), P("bo")));
  ad::Var h2 = ad::layer_norm(tape, d, P("ln2.g"), P("ln2.b"));
  ad::Var f = ad::linear(tape, ad::gelu(tape, ad::linear(tape, h2, P("w1"), P("b1"))), P("w2"), P("b2"));
  return ad::add(tape, d, f);
}

template <class T>
ad::Var SequenceLearner<T>::recurrent_states(ad::Tape<T>& tape, const Bound& p,
                                             const TokenMatrix& tokens) const {
  const int dm = config_.d_model;
  const int n = tokens.rows - 1;
  ad::Var e = embed(tape, p, tokens);
  ad::Var zero = tape.constant(1, dm, std::vector<T>(static_cast<std::size_t>(dm), T(0)));
  std::vector<ad::Var> seq;
  for (int t = 1; t <= n; ++t) {
    const int idx = t;
    seq.push_back(ad::gather_rows(tape, e, std::span<const int>(&idx, 1)));
  }
  for (int l = 0; l < config_.n_layers && n > 0; ++l) {
    auto P = [&](const char* f) { return p[params_.index(rnn_name(l, f))]; };
    ad::Var in = ad::stack_rows(tape, std::span<const ad::Var>(seq));
    ad::Var gx = ad::linear(tape, in, P("wx"), P("bx"));
    ad::Var h = zero;
    for (int t = 0; t < n; ++t) {
      ad::Var gxt = ad::gather_rows(tape, gx, std::span<const int>(&t, 1));
      ad::Var gh = ad::linear(tape, h, P("wh"), P("bh"));
      ad::Var r = ad::sigmoid(tape, ad::add(tape, ad::slice_cols(tape, gxt, 0, dm),
                                            ad::slice_cols(tape, gh, 0, dm)));
      ad::Var z = ad::sigmoid(tape, ad::add(tape, ad::slice_cols(tape, gxt, dm, 2 * dm),
                                            ad::slice_cols(tape, gh, dm, 2 * dm)));
      ad::Var cand = ad::tanh(
          tape, ad::add(tape, ad::slice_cols(tape, gxt, 2 * dm, 3 * dm),
                        ad::mul(tape, r, ad::slice_cols(tape, gh, 2 * dm, 3 * dm))));
      h = ad::add(tape, cand, ad::mul(tape, z, ad::sub(tape, h, cand)));
      seq[static_cast<std::size_t>(t)] = h;
    }
  }
  std::vector<ad::Var> rows;
  rows.reserve(static_cast<std::size_t>(n) + 1);
  rows.push_back(zero);
  rows.insert(rows.end(), seq.begin(), seq.end());
  ad::Var s = ad::stack_rows(tape, std::span<const ad::Var>(rows));
  s = ad::layer_norm(tape, s, p[params_.index("lnf.g")], p[params_.index("lnf.b")]);
  return ad::linear(tape, s, p[params_.index("proj.w")], p[params_.index("proj.b")]);
}

template <class T>
ad::Var SequenceLearner<T>::context_states(ad::Tape<T>& tape, const Bound& p,
                                           const TokenMatrix& tokens) const {
  if (config_.arch == Arch::dual_stream) {
    throw std::logic_error("context_states: dual-stream learner has no context state");
  }
  if (config_.arch == Arch::recurrent) return recurrent_states(tape, p, tokens);
  if (tokens.rows > config_.max_context + 1) {
    throw std::length_error("context overflow: " + std::to_string(tokens.rows - 1) +
                            " points exceeds max_context " + std::to_string(config_.max_context));
  }
  ad::Var d = embed(tape, p, tokens);
  ad::AttentionSpec mask;
  mask.n_heads = config_.n_heads;
  mask.limit = iota_vec(tokens.rows);
  mask.position = mask.limit;
  mask.rel_span = config_.positional == Positional::relative ? config_.rel_span : 0;
  for (int l = 0; l < config_.n_layers; ++l) d = transformer_block(tape, p, l, d, mask);
  d = ad::layer_norm(tape, d, p[params_.index("lnf.g")], p[params_.index("lnf.b")]);
  return ad::linear(tape, d, p[params_.index("proj.w")], p[params_.index("proj.b")]);
}

template <class T>
ad::Var SequenceLearner<T>::head(ad::Tape<T>& tape, const Bound& p, ad::Var states,
                                 std::span<const std::vector<double>> x_query) const {
  if (tape.rows(states) != static_cast<int>(x_query.size())) {
    throw std::invalid_argument("head: state rows and queries differ");
  }
  if (config_.output_kind == OutputKind::chebyshev) {
    std::vector<T> xs;
    for (const auto& x : x_query) xs.push_back(static_cast<T>(x.at(0)));
    return ad::chebyshev_eval(tape, states, std::span<const T>(xs));
  }
  ad::Var h = states;
  if (config_.x_features() > 0) {
    const ad::Var parts[] = {states, feature_rows(tape, x_query, config_.x_features())};
    h = ad::concat_cols(tape, std::span<const ad::Var>(parts));
  }
  for (int i = 0; i < config_.head_depth; ++i) {
    h = ad::linear(tape, h, p[params_.index(head_name(i, "w"))], p[params_.index(head_name(i, "b"))]);
    if (i + 1 < config_.head_depth) h = ad::relu(tape, h);
  }
  return h;
}

template <class T>
ad::Var SequenceLearner<T>::dual_stream(ad::Tape<T>& tape, const Bound& p,
                                        const TokenMatrix& tokens,
                                        std::span<const std::vector<double>> x_query,
                                        std::span<const int> visible) const {
  if (config_.arch != Arch::dual_stream) throw std::logic_error("dual_stream: wrong architecture");
  if (x_query.size() != visible.size() || x_query.empty()) {
    throw std::invalid_argument("dual_stream: query rows and visibility limits are misaligned");
  }
  if (tokens.rows > config_.max_context + 1) {
    throw std::length_error("context overflow: " + std::to_string(tokens.rows - 1) +
                            " points exceeds max_context " + std::to_string(config_.max_context));
  }
  const int dm = config_.d_model;
  const int nx = static_cast<int>(x_query.size());
  const bool relative = config_.positional == Positional::relative;

  ad::AttentionSpec d_mask;
  d_mask.n_heads = config_.n_heads;
  d_mask.limit = iota_vec(tokens.rows);
  d_mask.position = d_mask.limit;
  d_mask.rel_span = relative ? config_.rel_span : 0;
  ad::AttentionSpec x_mask;
  x_mask.n_heads = config_.n_heads;
  x_mask.rel_span = d_mask.rel_span;
  for (int c : visible) {
    if (c < 0 || c >= tokens.rows) throw std::out_of_range("dual_stream: visibility beyond context");
    x_mask.limit.push_back(c);
    x_mask.position.push_back(c + 1);
  }

  ad::Var d = embed(tape, p, tokens);
  ad::Var x;
  if (config_.x_features() > 0) {
    x = ad::linear(tape, feature_rows(tape, x_query, config_.x_features()),
                   p[params_.index("xembed.w")], p[params_.index("xembed.b")]);
  } else {
    const int zero_row = 0;
    std::vector<int> idx(static_cast<std::size_t>(nx), zero_row);
    x = ad::gather_rows(tape, p[params_.index("xembed.b")], std::span<const int>(idx));
  }
  if (!relative) {
    x = ad::add(tape, x, ad::gather_rows(tape, p[params_.index("pos")],
                                         std::span<const int>(x_mask.position)));
  }

  for (int l = 0; l < config_.n_layers; ++l) {
    auto P = [&](const char* f) { return p[params_.index(layer_name(l, f))]; };
    ad::Var rel = relative ? P("rel") : ad::Var{};
    ad::Var hd = ad::layer_norm(tape, d, P("ln1.g"), P("ln1.b"));
    ad::Var hx = ad::layer_norm(tape, x, P("ln1.g"), P("ln1.b"));
    ad::Var qd = ad::linear(tape, hd, P("wq"), P("bq"));
    ad::Var qx = ad::linear(tape, hx, P("wq"), P("bq"));
    ad::Var kv = ad::linear(tape, hd, P("wkv"), P("bkv"));
    ad::Var k = ad::slice_cols(tape, kv, 0, dm);
    ad::Var v = ad::slice_cols(tape, kv, dm, 2 * dm);
    ad::Var ad_ = ad::attention(tape, qd, k, v, d_mask, rel);
    ad::Var ax = ad::attention(tape, qx, k, v, x_mask, rel);
    d = ad::add(tape, d, ad::linear(tape, ad_, P("wo"), P("bo")));
    x = ad::add(tape, x, ad::linear(tape, ax, P("wo"), P("bo")));
    auto ffn = [&](ad::Var s) {
      ad::Var h = ad::layer_norm(tape, s, P("ln2.g"), P("ln2.b"));
      h = ad::gelu(tape, ad::linear(tape, h, P("w1"), P("b1")));
      return ad::add(tape, s, ad::linear(tape, h, P("w2"), P("b2")));
    };
    d = ffn(d);
    x = ffn(x);
  }
  x = ad::layer_norm(tape, x, p[params_.index("lnf.g")], p[params_.index("lnf.b")]);
  ad::Var out = ad::linear(tape, x, p[params_.index("out.w")], p[params_.index("out.b")]);
  if (config_.output_kind == OutputKind::chebyshev) {
    std::vector<T> xs;
    for (const auto& q : x_query) xs.push_back(static_cast<T>(q.at(0)));
    out = ad::chebyshev_eval(tape, out, std::span<const T>(xs));
  }
  return out;
}

template <class T>
ad::Var SequenceLearner<T>::outputs(ad::Tape<T>& tape, const Bound& p, const Episode& episode,
                                    std::span<const Query> queries) const {
  if (queries.empty()) throw std::invalid_argument("outputs: no queries");
  std::size_t max_c = 0;
  for (const Query& q : queries) {
    if (q.index >= episode.size() || q.context > episode.size()) {
      throw std::out_of_range("outputs: query outside the episode");
    }
    max_c = std::max(max_c, q.context);
  }
  const TokenMatrix tokens = encode_tokens(episode, config_, max_c);
  std::vector<std::vector<double>> xq;
  xq.reserve(queries.size());
  std::vector<int> ctx;
  ctx.reserve(queries.size());
  for (const Query& q : queries) {
    const auto& x = episode.points[q.index].x;
    xq.push_back(config_.output_kind == OutputKind::chebyshev ? x : featurize_x(config_, x));
    ctx.push_back(static_cast<int>(q.context));
  }
  if (config_.arch == Arch::dual_stream) {
    return dual_stream(tape, p, tokens, xq, ctx);
  }
  ad::Var states = context_states(tape, p, tokens);
  ad::Var picked = ad::gather_rows(tape, states, std::span<const int>(ctx));
  return head(tape, p, picked, xq);
}

template <class T>
ad::Var SequenceLearner<T>::loss(ad::Tape<T>& tape, ad::Var out, const Episode& episode,
                                 std::span<const Query> queries, std::span<const T> weights) const {
  if (config_.output_kind == OutputKind::categorical_multi) {
    std::vector<int> labels;
    for (const Query& q : queries) {
      const auto& l = episode.points.at(q.index).labels;
      labels.insert(labels.end(), l.begin(), l.end());
    }
    return ad::softmax_xent(tape, out, std::span<const int>(labels), config_.n_labels,
                            config_.n_classes, weights);
  }
  std::vector<T> target;
  for (const Query& q : queries) {
    const auto& y = episode.points.at(q.index).y;
    target.insert(target.end(), y.begin(), y.end());
  }
  return ad::mse_loss(tape, out, std::span<const T>(target), weights);
}

template class SequenceLearner<float>;
template class SequenceLearner<double>;

// ---------------------------------------------------------------------------
// Wrappers

namespace {

std::vector<std::vector<double>> rows_of(const ad::Tape<double>& tape, ad::Var v) {
  const int r = tape.rows(v);
  const int c = tape.cols(v);
  auto val = tape.value(v);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out[static_cast<std::size_t>(i)].assign(val.begin() + static_cast<std::ptrdiff_t>(i) * c,
                                            val.begin() + static_cast<std::ptrdiff_t>(i + 1) * c);
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> bottleneck_forward(const SequenceLearner<double>& learner,
                                                    const TokenMatrix& tokens) {
  if (learner.config().arch != Arch::bottleneck) {
    throw std::invalid_argument("bottleneck_forward: learner is not a bottleneck learner");
  }
  ad::Tape<double> tape(false);
  auto p = learner.bind(tape);
  return rows_of(tape, learner.context_states(tape, p, tokens));
}

std::vector<std::vector<double>> recurrent_forward(const SequenceLearner<double>& learner,
                                                   const TokenMatrix& tokens) {
  if (learner.config().arch != Arch::recurrent) {
    throw std::invalid_argument("recurrent_forward: learner is not recurrent");
  }
  ad::Tape<double> tape(false);
  auto p = learner.bind(tape);
  return rows_of(tape, learner.context_states(tape, p, tokens));
}

std::vector<std::vector<double>> dualstream_forward(const SequenceLearner<double>& learner,
                                                    const TokenMatrix& tokens,
                                                    std::span<const std::vector<double>> x_query) {
  if (static_cast<int>(x_query.size()) != tokens.rows - 1) {
    throw std::invalid_argument("dualstream_forward: |X| must equal |D| - 1");
  }
  ad::Tape<double> tape(false);
  auto p = learner.bind(tape);
  const auto visible = iota_vec(static_cast<int>(x_query.size()));
  return rows_of(tape, learner.dual_stream(tape, p, tokens, x_query, visible));
}

std::vector<std::vector<int>> query_stream_mask(int n) {
  std::vector<std::vector<int>> m(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));
  for (int t = 0; t < n; ++t) {
    for (int s = 0; s < t; ++s) m[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)] = 1;
  }
  return m;
}

std::vector<std::vector<int>> context_stream_mask(int n) {
  std::vector<std::vector<int>> m(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));
  for (int t = 0; t < n; ++t) {
    for (int s = 0; s <= t; ++s) m[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)] = 1;
  }
  return m;
}

}  // namespace preq
