#pragma once

#include <chrono>
#include <string>

#include "irr/elicitation.hpp"
#include "irr/scoring.hpp"

namespace irr {

/// Base of the log-probabilities a remote scorer reports.
enum class LogBase { natural, two, ten };

struct HttpEndpointConfig {
  /// Full URL of the POST route, e.g. http://127.0.0.1:8000/score
  std::string url;
  /// Identifier recorded as rater/scorer id.
  std::string id;
  /// Name of the environment variable holding a bearer token. The token
  /// itself never appears in configuration.
  std::string secret_env;
  std::chrono::seconds timeout{60};
};

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

/// Throws ValidationError unless the URL is http(s)://host[:port][/path].
ParsedUrl parse_url(const std::string& url);

/// POSTs {context, image_ref?, continuation} and expects
/// {token_logprobs: [...], token_count}.
class HttpScorerEndpoint : public ScorerEndpoint {
 public:
  HttpScorerEndpoint(HttpEndpointConfig config, bool multimodal, LogBase base = LogBase::natural);

  std::string id() const override { return config_.id; }
  bool multimodal() const override { return multimodal_; }
  ScoreResponse score(const ScoreRequest& request) override;

 private:
  HttpEndpointConfig config_;
  bool multimodal_;
  LogBase base_;
};

/// POSTs {system?, user, image_ref?} and expects {text}.
class HttpChatEndpoint : public ChatEndpoint {
 public:
  explicit HttpChatEndpoint(HttpEndpointConfig config);

  std::string id() const override { return config_.id; }
  ChatResponse chat(const ChatRequest& request) override;

 private:
  HttpEndpointConfig config_;
};

}  // namespace irr
