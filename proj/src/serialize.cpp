#include "preq/serialize.hpp"

#include <stdexcept>
#include <string>

namespace preq {

void require_known_fields(const Json& j, std::initializer_list<const char*> allowed,
                          const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument(where + ": unknown field '" + key + "'");
  }
}

namespace {

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Json to_json(const HmmHyper& h) {
  return {{"n_base_cycles", h.n_base_cycles},
          {"n_base_speeds", h.n_base_speeds},
          {"n_cycle_families", h.n_cycle_families},
          {"n_group_per_family", h.n_group_per_family},
          {"n_family_speeds", h.n_family_speeds},
          {"n_emission_groups", h.n_emission_groups},
          {"n_emission_per_group", h.n_emission_per_group},
          {"n_emission_shift", h.n_emission_shift},
          {"n_states", h.n_states},
          {"n_obs", h.n_obs},
          {"family_cycle_min", h.family_cycle_min},
          {"family_cycle_max", h.family_cycle_max},
          {"cycles_per_group", h.cycles_per_group},
          {"emission_support", h.emission_support}};
}

HmmHyper hmm_hyper_from_json(const Json& j) {
  require_known_fields(j,
                       {"n_base_cycles", "n_base_speeds", "n_cycle_families", "n_group_per_family",
                        "n_family_speeds", "n_emission_groups", "n_emission_per_group",
                        "n_emission_shift", "n_states", "n_obs", "family_cycle_min",
                        "family_cycle_max", "cycles_per_group", "emission_support"},
                       "hmm");
  HmmHyper h;
  read(j, "n_base_cycles", h.n_base_cycles);
  read(j, "n_base_speeds", h.n_base_speeds);
  read(j, "n_cycle_families", h.n_cycle_families);
  read(j, "n_group_per_family", h.n_group_per_family);
  read(j, "n_family_speeds", h.n_family_speeds);
  read(j, "n_emission_groups", h.n_emission_groups);
  read(j, "n_emission_per_group", h.n_emission_per_group);
  read(j, "n_emission_shift", h.n_emission_shift);
  read(j, "n_states", h.n_states);
  read(j, "n_obs", h.n_obs);
  read(j, "family_cycle_min", h.family_cycle_min);
  read(j, "family_cycle_max", h.family_cycle_max);
  read(j, "cycles_per_group", h.cycles_per_group);
  read(j, "emission_support", h.emission_support);
  h.validate();
  return h;
}

Json to_json(const TaskSpec& s) {
  Json j = {{"family", std::string(to_string(s.family))}};
  switch (s.family) {
    case Family::linear:
      j["input_dim"] = s.input_dim;
      j["noise_var"] = s.noise_var;
      break;
    case Family::sinusoid:
      j["input_dim"] = s.input_dim;
      j["n_terms"] = s.n_terms;
      j["noise_var"] = s.noise_var;
      if (!s.shared_freqs.empty()) j["shared_freqs"] = s.shared_freqs;
      break;
    case Family::mastermind:
      j["code_length"] = s.code_length;
      j["alphabet_size"] = s.alphabet_size;
      break;
    case Family::chebyshev:
      j["gen_degree"] = s.gen_degree;
      j["basis_size"] = s.basis_size;
      j["noise_var"] = s.noise_var;
      break;
    case Family::hmm:
    case Family::hmm_supervised:
      j["hmm"] = to_json(s.hmm);
      j["hmm_eval_fraction"] = s.hmm_eval_fraction;
      break;
  }
  return j;
}

TaskSpec task_spec_from_json(const Json& j) {
  require_known_fields(j,
                       {"family", "input_dim", "noise_var", "n_terms", "shared_freqs", "code_length",
                        "alphabet_size", "gen_degree", "basis_size", "hmm", "hmm_eval_fraction"},
                       "task");
  if (!j.contains("family")) throw std::invalid_argument("task: missing 'family'");
  const Family f = family_from_string(j.at("family").get<std::string>());
  TaskSpec s;
  switch (f) {
    case Family::linear: s = TaskSpec::linear(); break;
    case Family::sinusoid: s = TaskSpec::sinusoid(); break;
    case Family::mastermind: s = TaskSpec::mastermind(); break;
    case Family::chebyshev: s = TaskSpec::chebyshev(); break;
    case Family::hmm:
    case Family::hmm_supervised:
      s = TaskSpec::hidden_markov();
      s.family = f;
      break;
  }
  read(j, "input_dim", s.input_dim);
  read(j, "noise_var", s.noise_var);
  read(j, "n_terms", s.n_terms);
  read(j, "shared_freqs", s.shared_freqs);
  read(j, "code_length", s.code_length);
  read(j, "alphabet_size", s.alphabet_size);
  read(j, "gen_degree", s.gen_degree);
  read(j, "basis_size", s.basis_size);
  if (j.contains("hmm")) s.hmm = hmm_hyper_from_json(j.at("hmm"));
  read(j, "hmm_eval_fraction", s.hmm_eval_fraction);
  s.validate();
  return s;
}

Json to_json(const LearnerConfig& c) {
  return {{"arch", std::string(to_string(c.arch))},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"d_model", c.d_model},
          {"d_ff", c.d_ff},
          {"d_bottleneck", c.d_bottleneck},
          {"head_depth", c.head_depth},
          {"head_width", c.head_width},
          {"output_kind", std::string(to_string(c.output_kind))},
          {"max_context", c.max_context},
          {"positional", std::string(to_string(c.positional))},
          {"rel_span", c.rel_span},
          {"x_encoding", static_cast<int>(c.x_encoding)},
          {"x_dim", c.x_dim},
          {"x_alphabet", c.x_alphabet},
          {"y_dim", c.y_dim},
          {"n_labels", c.n_labels},
          {"n_classes", c.n_classes}};
}

LearnerConfig learner_config_from_json(const Json& j) {
  require_known_fields(j,
                       {"arch", "n_layers", "n_heads", "d_model", "d_ff", "d_bottleneck", "head_depth",
                        "head_width", "output_kind", "max_context", "positional", "rel_span",
                        "x_encoding", "x_dim", "x_alphabet", "y_dim", "n_labels", "n_classes"},
                       "learner");
  LearnerConfig c;
  if (j.contains("arch")) c.arch = arch_from_string(j.at("arch").get<std::string>());
  read(j, "n_layers", c.n_layers);
  read(j, "n_heads", c.n_heads);
  read(j, "d_model", c.d_model);
  read(j, "d_ff", c.d_ff);
  read(j, "d_bottleneck", c.d_bottleneck);
  read(j, "head_depth", c.head_depth);
  read(j, "head_width", c.head_width);
  if (j.contains("output_kind")) c.output_kind = output_kind_from_string(j.at("output_kind").get<std::string>());
  read(j, "max_context", c.max_context);
  if (j.contains("positional")) c.positional = positional_from_string(j.at("positional").get<std::string>());
  read(j, "rel_span", c.rel_span);
  if (j.contains("x_encoding")) {
    const int e = j.at("x_encoding").get<int>();
    if (e < 0 || e > 2) throw std::invalid_argument("learner: bad x_encoding");
    c.x_encoding = static_cast<XEncoding>(e);
  }
  read(j, "x_dim", c.x_dim);
  read(j, "x_alphabet", c.x_alphabet);
  read(j, "y_dim", c.y_dim);
  read(j, "n_labels", c.n_labels);
  read(j, "n_classes", c.n_classes);
  return c;
}

Json to_json(const ObjectiveSpec& o) {
  return {{"kind", std::string(to_string(o.kind))},
          {"loss", std::string(to_string(o.loss))},
          {"suffix_fraction", o.suffix_fraction}};
}

ObjectiveSpec objective_from_json(const Json& j) {
  require_known_fields(j, {"kind", "loss", "suffix_fraction"}, "objective");
  ObjectiveSpec o;
  if (j.contains("kind")) o.kind = objective_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("loss")) o.loss = error_kind_from_string(j.at("loss").get<std::string>());
  read(j, "suffix_fraction", o.suffix_fraction);
  o.validate();
  return o;
}

Json to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size}, {"epochs", t.epochs},
          {"seed", t.seed},                   {"beta1", t.beta1},           {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},           {"grad_clip", t.grad_clip},   {"parallel", t.parallel}};
}

TrainConfig train_config_from_json(const Json& j) {
  require_known_fields(j,
                       {"learning_rate", "batch_size", "epochs", "seed", "beta1", "beta2", "adam_eps",
                        "grad_clip", "parallel"},
                       "train");
  TrainConfig t;
  read(j, "learning_rate", t.learning_rate);
  read(j, "batch_size", t.batch_size);
  read(j, "epochs", t.epochs);
  read(j, "seed", t.seed);
  read(j, "beta1", t.beta1);
  read(j, "beta2", t.beta2);
  read(j, "adam_eps", t.adam_eps);
  read(j, "grad_clip", t.grad_clip);
  read(j, "parallel", t.parallel);
  t.validate();
  return t;
}

Json to_json(const BaselineConfig& b) {
  return {{"depth", b.depth},
          {"width", b.width},
          {"learning_rate", b.learning_rate},
          {"batch_size", b.batch_size},
          {"max_epochs", b.max_epochs},
          {"early_stopping", b.early_stopping},
          {"early_stop_delta", b.early_stop_delta},
          {"early_stop_patience", b.early_stop_patience},
          {"weight_decay", b.weight_decay},
          {"val_fraction", b.val_fraction},
          {"seed", b.seed}};
}

BaselineConfig baseline_config_from_json(const Json& j) {
  require_known_fields(j,
                       {"depth", "width", "learning_rate", "batch_size", "max_epochs", "early_stopping",
                        "early_stop_delta", "early_stop_patience", "weight_decay", "val_fraction", "seed"},
                       "baseline");
  BaselineConfig b;
  read(j, "depth", b.depth);
  read(j, "width", b.width);
  read(j, "learning_rate", b.learning_rate);
  read(j, "batch_size", b.batch_size);
  read(j, "max_epochs", b.max_epochs);
  read(j, "early_stopping", b.early_stopping);
  read(j, "early_stop_delta", b.early_stop_delta);
  read(j, "early_stop_patience", b.early_stop_patience);
  read(j, "weight_decay", b.weight_decay);
  read(j, "val_fraction", b.val_fraction);
  read(j, "seed", b.seed);
  b.validate();
  return b;
}

Json to_json(const EvalOptions& e) {
  return {{"mode", std::string(to_string(e.mode))}, {"n_query", e.n_query}, {"parallel", e.parallel}};
}

EvalOptions eval_options_from_json(const Json& j) {
  require_known_fields(j, {"mode", "n_query", "parallel"}, "eval options");
  EvalOptions e;
  if (j.contains("mode")) e.mode = eval_mode_from_string(j.at("mode").get<std::string>());
  read(j, "n_query", e.n_query);
  read(j, "parallel", e.parallel);
  return e;
}

Json to_json(const probe::ProbeConfig& p) {
  return {{"temperature", p.temperature},
          {"max_retries", p.max_retries},
          {"top_logprobs", p.top_logprobs},
          {"endpoint", p.endpoint},
          {"model", p.model},
          {"api_key_env", p.api_key_env},
          {"timeout_seconds", p.timeout_seconds},
          {"max_backoff_attempts", p.max_backoff_attempts},
          {"backoff_base_seconds", p.backoff_base_seconds},
          {"surrogate_epsilon", p.surrogate_epsilon},
          {"transcript_path", p.transcript_path}};
}

probe::ProbeConfig probe_config_from_json(const Json& j) {
  require_known_fields(j,
                       {"temperature", "max_retries", "top_logprobs", "endpoint", "model", "api_key_env",
                        "timeout_seconds", "max_backoff_attempts", "backoff_base_seconds",
                        "surrogate_epsilon", "transcript_path"},
                       "probe");
  probe::ProbeConfig p;
  read(j, "temperature", p.temperature);
  read(j, "max_retries", p.max_retries);
  read(j, "top_logprobs", p.top_logprobs);
  read(j, "endpoint", p.endpoint);
  read(j, "model", p.model);
  read(j, "api_key_env", p.api_key_env);
  read(j, "timeout_seconds", p.timeout_seconds);
  read(j, "max_backoff_attempts", p.max_backoff_attempts);
  read(j, "backoff_base_seconds", p.backoff_base_seconds);
  read(j, "surrogate_epsilon", p.surrogate_epsilon);
  read(j, "transcript_path", p.transcript_path);
  p.validate();
  return p;
}

Json to_json(const TaskParams& p) {
  return std::visit(
      [](const auto& v) -> Json {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, LinearParams>) {
          return {{"kind", "linear"}, {"w", v.w}, {"b", v.b}};
        } else if constexpr (std::is_same_v<V, SinusoidParams>) {
          return {{"kind", "sinusoid"}, {"alpha", v.alpha}};
        } else if constexpr (std::is_same_v<V, MastermindParams>) {
          return {{"kind", "mastermind"}, {"code", v.code}};
        } else if constexpr (std::is_same_v<V, ChebyshevParams>) {
          return {{"kind", "chebyshev"}, {"alpha", v.alpha}};
        } else {
          const HmmLatent& l = v.latent;
          return {{"kind", "hmm"},
                  {"base_id", l.base_id},
                  {"base_dir", l.base_dir},
                  {"base_speed", l.base_speed},
                  {"family_group_ids", l.family_group_ids},
                  {"family_dir", l.family_dir},
                  {"family_speed", l.family_speed},
                  {"emission_ids", l.emission_ids},
                  {"emission_shift", l.emission_shift}};
        }
      },
      p);
}

TaskParams task_params_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") return LinearParams{j.at("w").get<std::vector<double>>(), j.at("b").get<double>()};
  if (kind == "sinusoid") return SinusoidParams{j.at("alpha").get<std::vector<double>>()};
  if (kind == "mastermind") return MastermindParams{j.at("code").get<std::vector<int>>()};
  if (kind == "chebyshev") return ChebyshevParams{j.at("alpha").get<std::vector<double>>()};
  if (kind == "hmm") {
    HmmLatent l;
    l.base_id = j.at("base_id").get<int>();
    l.base_dir = j.at("base_dir").get<int>();
    l.base_speed = j.at("base_speed").get<int>();
    l.family_group_ids = j.at("family_group_ids").get<std::vector<int>>();
    l.family_dir = j.at("family_dir").get<int>();
    l.family_speed = j.at("family_speed").get<int>();
    l.emission_ids = j.at("emission_ids").get<std::vector<int>>();
    l.emission_shift = j.at("emission_shift").get<int>();
    return HmmParams{l};
  }
  throw std::invalid_argument("unknown task parameter kind: " + kind);
}

Json to_json(const PrequentialCurve& c) {
  return {{"context_sizes", c.context_sizes}, {"mean_error", c.mean_error}, {"stderr", c.stderr_},
          {"per_seed", c.per_seed},           {"seeds", c.seeds},           {"error_kind", std::string(to_string(c.error_kind))},
          {"learner", c.learner},             {"family", c.family}};
}

}  // namespace preq
