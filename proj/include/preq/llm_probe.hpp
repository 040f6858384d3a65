#pragma once

// Probing a hosted chat model on Mastermind: prompt construction, response
// parsing with retries, logprob scoring, and offline mock backends.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "preq/preq_eval.hpp"
#include "preq/tasks.hpp"

namespace preq::probe {

struct ProbeConfig {
  double temperature = 0.0;
  int max_retries = 10;
  int top_logprobs = 20;
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o";
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_seconds = 60.0;
  int max_backoff_attempts = 5;   // transport-level retries (429 / 5xx / network)
  double backoff_base_seconds = 1.0;
  double surrogate_epsilon = 0.1;  // scoring without logprobs
  std::string transcript_path;     // JSONL; empty disables

  void validate() const;
};

struct Example {
  std::vector<int> guess;
  MastermindResponse response;
};

std::string build_prompt(std::span<const Example> context, std::span<const int> query,
                         int code_length = 8, int alphabet_size = 6);

// "ws* int ws+ int ws*" with both ints in 0..8; nullopt on anything else.
std::optional<std::pair<int, int>> parse_response(std::string_view text);

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  std::vector<std::pair<std::string, double>> top;
};

struct BackendReply {
  std::string text;
  std::vector<TokenLogprob> tokens;  // empty when the backend gives no logprobs
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendReply complete(const std::string& prompt, const ProbeConfig& config) = 0;
  // Called before a task's queries; mocks use it, remote backends ignore it.
  virtual void begin_task(const Episode&) {}
  [[nodiscard]] virtual std::string name() const = 0;
};

struct ProbeResult {
  bool ok = false;
  std::pair<int, int> predicted{-1, -1};
  std::vector<TokenLogprob> logprobs;
  int retries = 0;
  std::string raw_text;
  std::string error;
};

// Re-asks on format failures, up to config.max_retries extra attempts. Backend
// exceptions and exhausted retries come back as a failed result.
ProbeResult query_with_retries(Backend& backend, const std::string& prompt, const ProbeConfig& config);

// Distributions over 0..8 for the two response numbers, from the logprobs of the
// first two digit tokens. Mass the backend did not list is spread uniformly over
// the unlisted digits.
std::optional<std::array<std::vector<double>, 2>> label_distributions(const ProbeResult& r);

// Cross-entropy in nats of the true response. Uses logprobs when present, else
// the surrogate q = 1 - eps (correct label) or eps / 8; failures score ln 81.
struct ProbeScore {
  double nats = 0.0;
  bool from_logprobs = false;
  bool failed = false;
};
ProbeScore score_probe(const ProbeResult& r, const MastermindResponse& truth, const ProbeConfig& config);

struct ProbeRecord {
  std::size_t task = 0;
  int context = 0;
  std::string prompt;
  ProbeResult result;
  ProbeScore score;
  MastermindResponse truth;
};

// For each task and grid size t: context = first t points, query = point t.
PrequentialCurve probe_curve(Backend& backend, const MetaDataset& tasks, std::span<const int> grid,
                             const ProbeConfig& config, std::vector<ProbeRecord>* records = nullptr);

// ---------------------------------------------------------------------------
// Mock backends

// Replays fixed replies in order, then repeats the last.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(std::vector<BackendReply> replies) : replies_(std::move(replies)) {}
  BackendReply complete(const std::string& prompt, const ProbeConfig& config) override;
  [[nodiscard]] std::string name() const override { return "scripted"; }
  [[nodiscard]] int calls() const { return calls_; }

 private:
  std::vector<BackendReply> replies_;
  int calls_ = 0;
};

// Knows the current task's code, reads the final guess from the prompt, and
// answers correctly with certainty.
class OracleBackend : public Backend {
 public:
  BackendReply complete(const std::string& prompt, const ProbeConfig& config) override;
  void begin_task(const Episode& episode) override;
  [[nodiscard]] std::string name() const override { return "oracle"; }

 private:
  std::vector<int> code_;
};

// Answers "0 0" with every digit listed at probability 1/9.
class UniformBackend : public Backend {
 public:
  BackendReply complete(const std::string& prompt, const ProbeConfig& config) override;
  [[nodiscard]] std::string name() const override { return "uniform"; }
};

// Final "Guess:" line of a prompt.
std::vector<int> final_guess(std::string_view prompt);

// OpenAI-compatible chat completions over HTTP(S). The key is read from the
// environment variable named in the config at request time.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(ProbeConfig config);
  BackendReply complete(const std::string& prompt, const ProbeConfig& config) override;
  [[nodiscard]] std::string name() const override { return "http:" + config_.model; }

  // Request body and reply parsing, exposed for offline tests.
  static std::string request_body(const std::string& prompt, const ProbeConfig& config);
  static BackendReply parse_reply(const std::string& body);

 private:
  ProbeConfig config_;
};

}  // namespace preq::probe
