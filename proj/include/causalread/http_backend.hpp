#pragma once

#include <memory>
#include <string>

#include "causalread/scoring.hpp"

namespace causalread {

struct ParsedUrl {
  std::string scheme_host_port;  ///< "http://host:port"
  std::string path;              ///< "/score"
};

ParsedUrl parse_url(const std::string& url);

/// Speaks the native wire protocol: POST `{text, mode, mask_index?}` with
/// bearer auth, response `{tokens:[{text,start,end,logprob}]}`.
class RemoteBackend : public ScoringBackend {
 public:
  explicit RemoteBackend(BackendDescriptor descriptor);

  [[nodiscard]] const BackendDescriptor& descriptor() const override { return descriptor_; }
  std::vector<BackendToken> query(const BackendRequest& request) override;

 private:
  BackendDescriptor descriptor_;
  std::unique_ptr<RateLimiter> limiter_;
};

/// Adapter for completions endpoints that echo prompt log-probabilities:
/// request `{model, prompt, max_tokens:0, echo:true, logprobs:k}`, response
/// `choices[0].logprobs.{tokens, token_logprobs, text_offset}`. CLM only.
class CompletionsBackend : public ScoringBackend {
 public:
  CompletionsBackend(BackendDescriptor descriptor, std::string model, int top_logprobs = 0);

  [[nodiscard]] const BackendDescriptor& descriptor() const override { return descriptor_; }
  std::vector<BackendToken> query(const BackendRequest& request) override;
  [[nodiscard]] std::string fingerprint() const override { return descriptor_.name + ":" + model_; }

  /// Exposed for tests: converts a completions response body to tokens.
  static std::vector<BackendToken> parse_response(const std::string& body);
  [[nodiscard]] std::string request_body(const std::string& prompt) const;

 private:
  BackendDescriptor descriptor_;
  std::string model_;
  int top_logprobs_;
  std::unique_ptr<RateLimiter> limiter_;
};

/// POST with retries on transport errors, 429 and 5xx. Throws
/// BackendUnavailable once retries are exhausted or on 401/403.
std::string post_json(const EndpointConfig& endpoint, RateLimiter* limiter, const std::string& body);

}  // namespace causalread
