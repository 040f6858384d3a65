#include "preq/llm_probe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace preq::probe {

void ProbeConfig::validate() const {
  if (max_retries < 0) throw std::invalid_argument("ProbeConfig: max_retries must be >= 0");
  if (top_logprobs < 0 || top_logprobs > 20) throw std::invalid_argument("ProbeConfig: top_logprobs must be in [0, 20]");
  if (temperature < 0.0) throw std::invalid_argument("ProbeConfig: temperature must be >= 0");
  if (!(surrogate_epsilon > 0.0 && surrogate_epsilon < 1.0)) {
    throw std::invalid_argument("ProbeConfig: surrogate_epsilon must be in (0, 1)");
  }
  if (max_backoff_attempts < 0) throw std::invalid_argument("ProbeConfig: max_backoff_attempts must be >= 0");
}

namespace {

std::string digits(std::span<const int> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::string build_prompt(std::span<const Example> context, std::span<const int> query,
                         int code_length, int alphabet_size) {
  const std::string L = std::to_string(code_length);
  std::ostringstream p;
  p << "I have a secret code in mind. It's a " << L
    << "-digit code with each digit ranging between 0 and " << alphabet_size - 1
    << ". I'll give you a couple example guesses, and for each guess I'll tell you two numbers:\n"
    << "\n"
    << "- First number: the number of correct correct digits at their correct position.\n"
    << "- Second number: the number of correct digits, which aren't necessarily in the correct position.\n"
    << "\n"
    << "Here's a demo to show you what a guess and response would look like. Imagine my secret code was:\n"
    << "0 5 2 1 3 4 2 4\n"
    << "And imagine the guess I presented you was:\n"
    << "0 2 1 1 0 2 0 4\n"
    << "Then, the response would be:\n"
    << "3 5\n"
    << "\n"
    << "The response is the way it is because the first, forth and last digit were in the correct "
       "place (first response number is therefore 3) and additionally the second and sixth digit "
       "were in the guess but at the wrong position (second response number is therefore 5).\n"
    << "\n"
    << "The game is about to start. I'll present you with a series of guesses and their responses. "
       "Finally, I will present you with a new guess, and you'll have to predict the correct "
       "response. Make sure your response is formatted the same way as in the examples (i.e., with "
       "2 digits between 0-"
    << L << ", separated by a space). Let's begin.\n"
    << "\n"
    << "----------------------\n"
    << "\n";
  for (const Example& e : context) {
    p << "Guess: " << digits(e.guess) << "\n"
      << "Response: " << e.response.exact << ' ' << e.response.common << "\n"
      << "\n";
  }
  p << "Guess: " << digits(query) << "\n"
    << "Response: ? ?\n"
    << "\n"
    << "-----------\n"
    << "\n"
    << "What do you think the response is for this final guess? Make sure to reply with just 2 "
       "digits between 0-"
    << L << ", separated by a single space character.";
  return p.str();
}

std::optional<std::pair<int, int>> parse_response(std::string_view text) {
  auto is_ws = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto skip_ws = [&] {
    std::size_t start = i;
    while (i < n && is_ws(text[i])) ++i;
    return i - start;
  };
  auto read_int = [&]() -> std::optional<int> {
    const std::size_t start = i;
    while (i < n && is_digit(text[i])) ++i;
    if (i == start || i - start > 3) return std::nullopt;
    return std::stoi(std::string(text.substr(start, i - start)));
  };
  skip_ws();
  const auto a = read_int();
  if (!a) return std::nullopt;
  if (skip_ws() == 0) return std::nullopt;
  const auto b = read_int();
  if (!b) return std::nullopt;
  skip_ws();
  if (i != n) return std::nullopt;
  if (*a > 8 || *b > 8) return std::nullopt;
  return std::make_pair(*a, *b);
}

ProbeResult query_with_retries(Backend& backend, const std::string& prompt, const ProbeConfig& config) {
  config.validate();
  ProbeResult r;
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    r.retries = attempt;
    BackendReply reply;
    try {
      reply = backend.complete(prompt, config);
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = std::string("backend error: ") + e.what();
      return r;
    }
    r.raw_text = reply.text;
    r.logprobs = reply.tokens;
    if (auto parsed = parse_response(reply.text)) {
      r.ok = true;
      r.predicted = *parsed;
      r.error.clear();
      return r;
    }
    r.error = "format failure";
  }
  r.ok = false;
  r.error = "retries exhausted after " + std::to_string(config.max_retries) + " retries";
  return r;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

int digit_of(std::string_view token) {
  const std::string t = trim(token);
  if (t.size() == 1 && t[0] >= '0' && t[0] <= '8') return t[0] - '0';
  return -1;
}

std::vector<double> digit_distribution(const TokenLogprob& tok) {
  constexpr int K = 9;
  std::vector<double> p(K, 0.0);
  std::vector<bool> listed(K, false);
  auto add = [&](std::string_view token, double lp) {
    const int d = digit_of(token);
    if (d < 0) return;
    p[static_cast<std::size_t>(d)] += std::exp(lp);
    listed[static_cast<std::size_t>(d)] = true;
  };
  if (tok.top.empty()) {
    add(tok.token, tok.logprob);
  } else {
    for (const auto& [t, lp] : tok.top) add(t, lp);
  }
  double mass = 0.0;
  int unlisted = 0;
  for (int d = 0; d < K; ++d) {
    mass += p[static_cast<std::size_t>(d)];
    if (!listed[static_cast<std::size_t>(d)]) ++unlisted;
  }
  const double rest = std::max(0.0, 1.0 - mass);
  if (unlisted > 0) {
    for (int d = 0; d < K; ++d) {
      if (!listed[static_cast<std::size_t>(d)]) p[static_cast<std::size_t>(d)] = rest / unlisted;
    }
  }
  double z = 0.0;
  for (double v : p) z += v;
  for (double& v : p) v /= z;
  return p;
}

}  // namespace

std::optional<std::array<std::vector<double>, 2>> label_distributions(const ProbeResult& r) {
  std::vector<const TokenLogprob*> digit_tokens;
  for (const auto& t : r.logprobs) {
    if (digit_of(t.token) >= 0) digit_tokens.push_back(&t);
    if (digit_tokens.size() == 2) break;
  }
  if (digit_tokens.size() < 2) return std::nullopt;
  return std::array<std::vector<double>, 2>{digit_distribution(*digit_tokens[0]),
                                            digit_distribution(*digit_tokens[1])};
}

ProbeScore score_probe(const ProbeResult& r, const MastermindResponse& truth, const ProbeConfig& config) {
  ProbeScore s;
  const int labels[2] = {truth.exact, truth.common};
  for (int v : labels) {
    if (v < 0 || v > 8) throw std::out_of_range("score_probe: response outside 0..8");
  }
  if (!r.ok) {
    s.failed = true;
    s.nats = std::log(81.0);
    return s;
  }
  constexpr double kFloor = 1e-12;
  if (auto dists = label_distributions(r)) {
    s.from_logprobs = true;
    for (int l = 0; l < 2; ++l) {
      s.nats -= std::log(std::max(kFloor, (*dists)[static_cast<std::size_t>(l)][static_cast<std::size_t>(labels[l])]));
    }
    return s;
  }
  const int predicted[2] = {r.predicted.first, r.predicted.second};
  const double eps = config.surrogate_epsilon;
  for (int l = 0; l < 2; ++l) {
    s.nats -= std::log(predicted[l] == labels[l] ? 1.0 - eps : eps / 8.0);
  }
  return s;
}

PrequentialCurve probe_curve(Backend& backend, const MetaDataset& tasks, std::span<const int> grid,
                             const ProbeConfig& config, std::vector<ProbeRecord>* records) {
  config.validate();
  if (tasks.spec.family != Family::mastermind) throw std::invalid_argument("probe_curve: Mastermind tasks only");
  PrequentialCurve c;
  c.error_kind = ErrorKind::cross_entropy;
  c.learner = backend.name();
  c.family = "mastermind";
  c.context_sizes.assign(grid.begin(), grid.end());
  c.per_seed = {{}};
  if (grid.empty()) return c;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (grid[i] <= grid[i - 1]) throw std::invalid_argument("probe_curve: grid must increase");
  }
  std::vector<std::vector<double>> err(grid.size());
  for (std::size_t e = 0; e < tasks.episodes.size(); ++e) {
    const Episode& ep = tasks.episodes[e];
    if (grid.back() >= static_cast<int>(ep.size())) throw std::out_of_range("probe_curve: grid beyond episode");
    backend.begin_task(ep);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const int t = grid[g];
      std::vector<Example> ctx;
      for (int j = 0; j < t; ++j) {
        const DataPoint& p = ep.points[static_cast<std::size_t>(j)];
        ctx.push_back({std::vector<int>(p.x.begin(), p.x.end()), {p.labels.at(0), p.labels.at(1)}});
      }
      const DataPoint& q = ep.points[static_cast<std::size_t>(t)];
      const std::vector<int> guess(q.x.begin(), q.x.end());
      const std::string prompt = build_prompt(ctx, guess, ep.spec.code_length, ep.spec.alphabet_size);
      const MastermindResponse truth{q.labels.at(0), q.labels.at(1)};
      ProbeResult res = query_with_retries(backend, prompt, config);
      const ProbeScore score = score_probe(res, truth, config);
      err[g].push_back(score.nats);
      if (records) records->push_back({e, t, prompt, std::move(res), score, truth});
    }
  }
  for (const auto& col : err) {
    double m = 0.0;
    for (double v : col) m += v;
    m /= static_cast<double>(col.size());
    double ss = 0.0;
    for (double v : col) ss += (v - m) * (v - m);
    c.mean_error.push_back(m);
    c.stderr_.push_back(col.size() > 1 ? std::sqrt(ss / static_cast<double>(col.size() - 1) / static_cast<double>(col.size())) : 0.0);
  }
  c.per_seed = {c.mean_error};
  return c;
}

BackendReply ScriptedBackend::complete(const std::string&, const ProbeConfig&) {
  if (replies_.empty()) throw std::runtime_error("ScriptedBackend: no replies");
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(calls_), replies_.size() - 1);
  ++calls_;
  return replies_[i];
}

std::vector<int> final_guess(std::string_view prompt) {
  const std::size_t at = prompt.rfind("Guess: ");
  if (at == std::string_view::npos) throw std::invalid_argument("final_guess: no guess in prompt");
  const std::size_t end = prompt.find('\n', at);
  std::istringstream in(std::string(prompt.substr(at + 7, end - at - 7)));
  std::vector<int> g;
  int v;
  while (in >> v) g.push_back(v);
  return g;
}

void OracleBackend::begin_task(const Episode& episode) {
  const auto* params = std::get_if<MastermindParams>(&episode.params);
  if (!params) throw std::invalid_argument("OracleBackend: not a Mastermind task");
  code_ = params->code;
}

BackendReply OracleBackend::complete(const std::string& prompt, const ProbeConfig&) {
  if (code_.empty()) throw std::logic_error("OracleBackend: no task set");
  const auto guess = final_guess(prompt);
  const MastermindResponse r = mastermind_response(code_, guess);
  BackendReply reply;
  reply.text = std::to_string(r.exact) + " " + std::to_string(r.common);
  reply.tokens = {{std::to_string(r.exact), 0.0, {{std::to_string(r.exact), 0.0}}},
                  {" ", 0.0, {{" ", 0.0}}},
                  {std::to_string(r.common), 0.0, {{std::to_string(r.common), 0.0}}}};
  return reply;
}

BackendReply UniformBackend::complete(const std::string&, const ProbeConfig&) {
  const double lp = -std::log(9.0);
  TokenLogprob digit{"0", lp, {}};
  for (int d = 0; d < 9; ++d) digit.top.emplace_back(std::to_string(d), lp);
  BackendReply reply;
  reply.text = "0 0";
  reply.tokens = {digit, {" ", 0.0, {{" ", 0.0}}}, digit};
  return reply;
}

}  // namespace preq::probe
