#pragma once

// JSON forms of the configuration structs. Readers reject unknown fields.

#include <json.hpp>

#include "preq/learners.hpp"
#include "preq/llm_probe.hpp"
#include "preq/objectives.hpp"
#include "preq/preq_eval.hpp"
#include "preq/sgd_baseline.hpp"
#include "preq/tasks.hpp"

namespace preq {

using Json = nlohmann::json;

// Throws naming `where` and the first key of `j` not in `allowed`.
void require_known_fields(const Json& j, std::initializer_list<const char*> allowed,
                          const std::string& where);

Json to_json(const HmmHyper& h);
HmmHyper hmm_hyper_from_json(const Json& j);
Json to_json(const TaskSpec& s);
TaskSpec task_spec_from_json(const Json& j);
Json to_json(const LearnerConfig& c);
LearnerConfig learner_config_from_json(const Json& j);
Json to_json(const ObjectiveSpec& o);
ObjectiveSpec objective_from_json(const Json& j);
Json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const BaselineConfig& b);
BaselineConfig baseline_config_from_json(const Json& j);
Json to_json(const EvalOptions& e);
EvalOptions eval_options_from_json(const Json& j);
Json to_json(const probe::ProbeConfig& p);
probe::ProbeConfig probe_config_from_json(const Json& j);

Json to_json(const TaskParams& p);
TaskParams task_params_from_json(const Json& j);
Json to_json(const PrequentialCurve& c);

}  // namespace preq
