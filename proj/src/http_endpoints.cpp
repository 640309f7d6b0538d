#include "irr/http_endpoints.hpp"

#include <cmath>
#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <json.hpp>

namespace irr {

using nlohmann::json;

namespace {

httplib::Headers auth_headers(const std::string& secret_env) {
  httplib::Headers headers;
  if (secret_env.empty()) return headers;
  if (const char* token = std::getenv(secret_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  return headers;
}

json post_json(const HttpEndpointConfig& config, const json& body) {
  const auto url = parse_url(config.url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(config.timeout);
  client.set_read_timeout(config.timeout);
  client.set_write_timeout(config.timeout);

  auto res = client.Post(url.path, auth_headers(config.secret_env), body.dump(),
                         "application/json");
  if (!res) {
    throw EndpointError(config.id + ": request to " + config.url +
                        " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw EndpointError(config.id + ": HTTP " + std::to_string(res->status) + " from " +
                        config.url);
  }
  auto parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    throw EndpointError(config.id + ": response is not a JSON object");
  }
  return parsed;
}

double log_base_factor(LogBase base) {
  switch (base) {
    case LogBase::natural:
      return 1.0;
    case LogBase::two:
      return std::log(2.0);
    case LogBase::ten:
      return std::log(10.0);
  }
  return 1.0;
}

}  // namespace

ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/\s]+)(/[^\s]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ValidationError("invalid endpoint URL '" + url + "'");
  return ParsedUrl{m[1], m[2].matched ? std::string(m[2]) : std::string("/")};
}

HttpScorerEndpoint::HttpScorerEndpoint(HttpEndpointConfig config, bool multimodal, LogBase base)
    : config_(std::move(config)), multimodal_(multimodal), base_(base) {
  parse_url(config_.url);
}

ScoreResponse HttpScorerEndpoint::score(const ScoreRequest& request) {
  json body{{"context", request.context}, {"continuation", request.continuation}};
  if (request.image_ref) body["image_ref"] = *request.image_ref;
  const auto j = post_json(config_, body);

  if (!j.contains("token_logprobs") || !j["token_logprobs"].is_array()) {
    throw ScorerContractError(config_.id + ": response has no token_logprobs");
  }
  ScoreResponse out;
  const double factor = log_base_factor(base_);
  for (const auto& v : j["token_logprobs"]) {
    if (!v.is_number()) throw ScorerContractError(config_.id + ": non-numeric log-probability");
    out.token_logprobs.push_back(v.get<double>() * factor);
  }
  out.token_count = j.value("token_count", static_cast<int>(out.token_logprobs.size()));
  return out;
}

HttpChatEndpoint::HttpChatEndpoint(HttpEndpointConfig config) : config_(std::move(config)) {
  parse_url(config_.url);
}

ChatResponse HttpChatEndpoint::chat(const ChatRequest& request) {
  json body{{"user", request.user}};
  if (request.system) body["system"] = *request.system;
  if (request.image_ref) body["image_ref"] = *request.image_ref;
  const auto j = post_json(config_, body);
  if (!j.contains("text") || !j["text"].is_string()) {
    throw EndpointError(config_.id + ": response has no text");
  }
  return ChatResponse{j["text"].get<std::string>()};
}

}  // namespace irr
