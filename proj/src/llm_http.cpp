#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <regex>
#include <stdexcept>
#include <thread>

#ifdef PREQ_HTTPS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <json.hpp>

#include "preq/llm_probe.hpp"

namespace preq::probe {

using nlohmann::json;

HttpBackend::HttpBackend(ProbeConfig config) : config_(std::move(config)) { config_.validate(); }

std::string HttpBackend::request_body(const std::string& prompt, const ProbeConfig& config) {
  json body = {
      {"model", config.model},
      {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
      {"temperature", config.temperature},
      {"max_tokens", 16},
  };
  if (config.top_logprobs > 0) {
    body["logprobs"] = true;
    body["top_logprobs"] = config.top_logprobs;
  }
  return body.dump();
}

BackendReply HttpBackend::parse_reply(const std::string& body) {
  const json j = json::parse(body);
  const json& choice = j.at("choices").at(0);
  BackendReply r;
  const json& content = choice.at("message").at("content");
  r.text = content.is_null() ? "" : content.get<std::string>();
  if (choice.contains("logprobs") && !choice["logprobs"].is_null() &&
      choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
    for (const json& t : choice["logprobs"]["content"]) {
      TokenLogprob tok;
      tok.token = t.at("token").get<std::string>();
      tok.logprob = t.at("logprob").get<double>();
      if (t.contains("top_logprobs")) {
        for (const json& alt : t["top_logprobs"]) {
          tok.top.emplace_back(alt.at("token").get<std::string>(), alt.at("logprob").get<double>());
        }
      }
      r.tokens.push_back(std::move(tok));
    }
  }
  return r;
}

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw std::invalid_argument("HttpBackend: bad endpoint URL " + url);
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

void append_transcript(const std::string& path, const std::string& request, int status,
                       const std::string& response) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("HttpBackend: cannot open transcript " + path);
  json line = {{"time", static_cast<long long>(std::time(nullptr))},
               {"request", json::parse(request)},
               {"status", status},
               {"response", response}};
  out << line.dump() << '\n';
}

}  // namespace

BackendReply HttpBackend::complete(const std::string& prompt, const ProbeConfig& config) {
  const char* key = std::getenv(config.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw std::runtime_error("HttpBackend: environment variable " + config.api_key_env + " is not set");
  }
  const Endpoint ep = split_url(config.endpoint);
  httplib::Client client(ep.origin);
  const auto timeout = std::chrono::duration<double>(config.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
  const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};
  const std::string body = request_body(prompt, config);

  std::string last_error;
  for (int attempt = 0; attempt <= config.max_backoff_attempts; ++attempt) {
    if (attempt > 0) {
      const double wait = config.backoff_base_seconds * static_cast<double>(1 << std::min(attempt - 1, 10));
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
    auto res = client.Post(ep.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      append_transcript(config.transcript_path, body, 0, last_error);
      continue;
    }
    append_transcript(config.transcript_path, body, res->status, res->body);
    if (res->status == 200) return parse_reply(res->body);
    last_error = "HTTP " + std::to_string(res->status);
    if (res->status != 429 && res->status < 500) break;
  }
  throw std::runtime_error("HttpBackend: " + last_error);
}

}  // namespace preq::probe
