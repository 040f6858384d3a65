#include <doctest.h>

#include <cmath>
#include <random>

#include "preq/llm_probe.hpp"
#include "preq/serialize.hpp"
#include "preq/tasks.hpp"

using namespace preq;
using namespace preq::probe;

namespace {

const char* kExpected =
    "I have a secret code in mind. It's a 8-digit code with each digit ranging between 0 and 5. "
    "I'll give you a couple example guesses, and for each guess I'll tell you two numbers:\n"
    "\n"
    "- First number: the number of correct correct digits at their correct position.\n"
    "- Second number: the number of correct digits, which aren't necessarily in the correct position.\n"
    "\n"
    "Here's a demo to show you what a guess and response would look like. Imagine my secret code was:\n"
    "0 5 2 1 3 4 2 4\n"
    "And imagine the guess I presented you was:\n"
    "0 2 1 1 0 2 0 4\n"
    "Then, the response would be:\n"
    "3 5\n"
    "\n"
    "The response is the way it is because the first, forth and last digit were in the correct place "
    "(first response number is therefore 3) and additionally the second and sixth digit were in the "
    "guess but at the wrong position (second response number is therefore 5).\n"
    "\n"
    "The game is about to start. I'll present you with a series of guesses and their responses. "
    "Finally, I will present you with a new guess, and you'll have to predict the correct response. "
    "Make sure your response is formatted the same way as in the examples (i.e., with 2 digits "
    "between 0-8, separated by a space). Let's begin.\n"
    "\n"
    "----------------------\n"
    "\n"
    "Guess: 4 2 1 3 4 0 0 5\n"
    "Response: 3 7\n"
    "\n"
    "Guess: 1 1 4 3 5 5 0 1\n"
    "Response: 2 5\n"
    "\n"
    "Guess: 3 0 2 2 0 5 3 4\n"
    "Response: 2 6\n"
    "\n"
    "Guess: 0 2 5 0 4 2 0 1\n"
    "Response: 1 5\n"
    "\n"
    "Guess: 4 1 3 2 5 4 2 3\n"
    "Response: ? ?\n"
    "\n"
    "-----------\n"
    "\n"
    "What do you think the response is for this final guess? Make sure to reply with just 2 digits "
    "between 0-8, separated by a single space character.";

BackendReply text(const std::string& s) { return {s, {}}; }

TokenLogprob digit_token(int d, double p_top) {
  TokenLogprob t{std::to_string(d), std::log(p_top), {}};
  t.top.emplace_back(std::to_string(d), std::log(p_top));
  return t;
}

}  // namespace

TEST_CASE("prompt matches the published template") {
  const std::vector<Example> ex{
      {{4, 2, 1, 3, 4, 0, 0, 5}, {3, 7}},
      {{1, 1, 4, 3, 5, 5, 0, 1}, {2, 5}},
      {{3, 0, 2, 2, 0, 5, 3, 4}, {2, 6}},
      {{0, 2, 5, 0, 4, 2, 0, 1}, {1, 5}},
  };
  const std::vector<int> q{4, 1, 3, 2, 5, 4, 2, 3};
  CHECK(build_prompt(ex, q) == kExpected);
  CHECK(build_prompt(ex, q) == build_prompt(ex, q));
  CHECK(final_guess(build_prompt(ex, q)) == q);

  const std::string empty = build_prompt({}, q);
  CHECK(empty.find("Response: 3 7") == std::string::npos);
  std::size_t blocks = 0;
  for (std::size_t p = 0; (p = empty.find("Guess: ", p)) != std::string::npos; ++p) ++blocks;
  CHECK(blocks == 1);
}

TEST_CASE("response grammar") {
  CHECK(parse_response("3 5") == std::make_pair(3, 5));
  CHECK(parse_response(" 0 8 \n") == std::make_pair(0, 8));
  CHECK(parse_response("0\t\t2") == std::make_pair(0, 2));
  CHECK_FALSE(parse_response("three five"));
  CHECK_FALSE(parse_response("35"));
  CHECK_FALSE(parse_response("3 9"));
  CHECK_FALSE(parse_response("3 5 1"));
  CHECK_FALSE(parse_response("3, 5"));
  CHECK_FALSE(parse_response("-3 5"));
  CHECK_FALSE(parse_response(""));
  CHECK_FALSE(parse_response("Response: 3 5"));

  // Fuzz against a reference grammar written with a different scan.
  std::mt19937 rng(11);
  const std::string alphabet = " 0123456789\t\nx-";
  auto reference = [](const std::string& s) -> std::optional<std::pair<int, int>> {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
      if (c == ' ' || c == '\t' || c == '\n') {
        if (!cur.empty()) parts.push_back(cur), cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) parts.push_back(cur);
    if (parts.size() != 2) return std::nullopt;
    int v[2];
    for (int i = 0; i < 2; ++i) {
      const std::string& p = parts[static_cast<std::size_t>(i)];
      if (p.empty() || p.size() > 3) return std::nullopt;
      for (char c : p) {
        if (c < '0' || c > '9') return std::nullopt;
      }
      v[i] = std::stoi(p);
      if (v[i] > 8) return std::nullopt;
    }
    return std::make_pair(v[0], v[1]);
  };
  for (int i = 0; i < 20000; ++i) {
    std::string s;
    const int len = static_cast<int>(rng() % 7);
    for (int k = 0; k < len; ++k) s += alphabet[rng() % alphabet.size()];
    CHECK(parse_response(s) == reference(s));
  }
}

TEST_CASE("retries") {
  ProbeConfig cfg;
  ScriptedBackend ok({text("3 5")});
  ProbeResult r = query_with_retries(ok, "p", cfg);
  CHECK(r.ok);
  CHECK(r.retries == 0);
  CHECK(r.predicted == std::make_pair(3, 5));

  ScriptedBackend once({text("hmm"), text("2 4")});
  r = query_with_retries(once, "p", cfg);
  CHECK(r.ok);
  CHECK(r.retries == 1);
  CHECK(r.predicted == std::make_pair(2, 4));

  ScriptedBackend never({text("garbage")});
  r = query_with_retries(never, "p", cfg);
  CHECK_FALSE(r.ok);
  CHECK(never.calls() == 11);
  CHECK(score_probe(r, {1, 2}, cfg).nats == doctest::Approx(std::log(81.0)));
}

TEST_CASE("scoring") {
  ProbeConfig cfg;
  ProbeResult r;
  r.ok = true;
  r.predicted = {2, 4};
  r.logprobs = {digit_token(2, 0.5), TokenLogprob{" ", 0.0, {}}, digit_token(4, 0.25)};
  // Unlisted mass spreads over the other eight digits.
  ProbeScore s = score_probe(r, {2, 4}, cfg);
  CHECK(s.from_logprobs);
  CHECK(s.nats == doctest::Approx(-std::log(0.5) - std::log(0.25)));
  s = score_probe(r, {3, 4}, cfg);
  CHECK(s.nats == doctest::Approx(-std::log(0.5 / 8) - std::log(0.25)));

  r.logprobs.clear();
  s = score_probe(r, {2, 5}, cfg);
  CHECK_FALSE(s.from_logprobs);
  CHECK(s.nats == doctest::Approx(-std::log(0.9) - std::log(0.1 / 8)));
}

TEST_CASE("offline curves") {
  const MetaDataset d = make_meta_dataset(TaskSpec::mastermind(), 3, 12, 9, Split::eval);
  const std::vector<int> grid{0, 1, 4, 10};
  ProbeConfig cfg;
  OracleBackend oracle;
  std::vector<ProbeRecord> records;
  const PrequentialCurve co = probe_curve(oracle, d, grid, cfg, &records);
  CHECK(records.size() == 12);
  for (double v : co.mean_error) CHECK(v < 1e-6);
  UniformBackend uniform;
  const PrequentialCurve cu = probe_curve(uniform, d, grid, cfg);
  for (double v : cu.mean_error) CHECK(std::abs(v - std::log(81.0)) < 1e-6);
  CHECK(probe_curve(uniform, d, {}, cfg).mean_error.empty());
  for (const ProbeRecord& rec : records) {
    const Episode& ep = d.episodes[rec.task];
    const auto& q = ep.points[static_cast<std::size_t>(rec.context)];
    CHECK(rec.truth.exact == q.labels[0]);
    CHECK(rec.truth.common == q.labels[1]);
  }
}

TEST_CASE("http request and reply handling offline") {
  ProbeConfig cfg;
  cfg.model = "m";
  cfg.top_logprobs = 5;
  const Json body = Json::parse(HttpBackend::request_body("hello", cfg));
  CHECK(body["model"] == "m");
  CHECK(body["messages"][0]["content"] == "hello");
  CHECK(body["temperature"] == 0.0);
  CHECK(body["logprobs"] == true);
  CHECK(body["top_logprobs"] == 5);

  const std::string reply = R"({"choices":[{"message":{"content":"3 5"},"logprobs":{"content":[
    {"token":"3","logprob":-0.1,"top_logprobs":[{"token":"3","logprob":-0.1},{"token":"2","logprob":-2.5}]},
    {"token":" ","logprob":0.0,"top_logprobs":[]},
    {"token":"5","logprob":-0.2,"top_logprobs":[{"token":"5","logprob":-0.2}]}]}}]})";
  const BackendReply r = HttpBackend::parse_reply(reply);
  CHECK(r.text == "3 5");
  REQUIRE(r.tokens.size() == 3);
  CHECK(r.tokens[0].top.size() == 2);
  CHECK(r.tokens[2].logprob == doctest::Approx(-0.2));

  const BackendReply bare = HttpBackend::parse_reply(R"({"choices":[{"message":{"content":"1 1"}}]})");
  CHECK(bare.tokens.empty());
}
