#include "causalread/http_backend.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>
#include <httplib.h>
#include <json.hpp>

#include "causalread/errors.hpp"

namespace causalread {

using nlohmann::json;

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ParseError(fmt::format("URL '{}' lacks a scheme", url));
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string post_json(const EndpointConfig& endpoint, RateLimiter* limiter, const std::string& body) {
  const ParsedUrl url = parse_url(endpoint.base_url);
  httplib::Headers headers;
  if (!endpoint.auth_token_env.empty()) {
    if (const char* token = std::getenv(endpoint.auth_token_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  std::string last_error;
  for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100) * (1 << std::min(attempt - 1, 6)));
    if (limiter) limiter->acquire();
    httplib::Client client(url.scheme_host_port);
    const auto timeout = std::chrono::duration<double>(endpoint.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) return res->body;
    if (res->status == 401 || res->status == 403) {
      throw BackendUnavailable(fmt::format("{} rejected credentials (HTTP {})", endpoint.base_url, res->status));
    }
    last_error = fmt::format("HTTP {}", res->status);
    if (res->status != 429 && res->status < 500) {
      throw BackendUnavailable(fmt::format("{} answered {}: {}", endpoint.base_url, last_error, res->body));
    }
  }
  throw BackendUnavailable(fmt::format("{} unavailable after {} attempts: {}", endpoint.base_url,
                                       endpoint.max_retries + 1, last_error));
}

namespace {

std::unique_ptr<RateLimiter> make_limiter(const EndpointConfig& endpoint) {
  if (endpoint.rate_limit_per_second <= 0.0) return nullptr;
  return std::make_unique<RateLimiter>(endpoint.rate_limit_per_second);
}

}  // namespace

RemoteBackend::RemoteBackend(BackendDescriptor descriptor)
    : descriptor_(std::move(descriptor)), limiter_(make_limiter(descriptor_.endpoint)) {
  if (!descriptor_.supports_clm && !descriptor_.supports_mlm) {
    throw DomainError(fmt::format("backend '{}' must support clm or mlm", descriptor_.name));
  }
}

std::vector<BackendToken> RemoteBackend::query(const BackendRequest& request) {
  return tokens_from_json(post_json(descriptor_.endpoint, limiter_.get(), request.to_json()));
}

CompletionsBackend::CompletionsBackend(BackendDescriptor descriptor, std::string model, int top_logprobs)
    : descriptor_(std::move(descriptor)), model_(std::move(model)), top_logprobs_(top_logprobs),
      limiter_(make_limiter(descriptor_.endpoint)) {
  descriptor_.supports_clm = true;
  descriptor_.supports_mlm = false;
}

std::string CompletionsBackend::request_body(const std::string& prompt) const {
  json j = {{"prompt", prompt}, {"max_tokens", 0}, {"echo", true}, {"logprobs", top_logprobs_}};
  if (!model_.empty()) j["model"] = model_;
  return j.dump();
}

std::vector<BackendToken> CompletionsBackend::parse_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
    const json& lp = j.at("choices").at(0).at("logprobs");
    const json& toks = lp.at("tokens");
    const json& logprobs = lp.at("token_logprobs");
    const json& offsets = lp.at("text_offset");
    if (toks.size() != logprobs.size() || toks.size() != offsets.size()) {
      throw AlignmentError("completions logprobs arrays differ in length");
    }
    std::vector<BackendToken> out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      BackendToken t;
      t.text = toks[i].get<std::string>();
      t.start = offsets[i].get<std::size_t>();
      t.end = t.start + utf8::length(t.text);
      t.logprob = logprobs[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : logprobs[i].get<double>();
      out.push_back(std::move(t));
    }
    return out;
  } catch (const json::exception& e) {
    throw AlignmentError(fmt::format("unexpected completions response: {}", e.what()));
  }
}

std::vector<BackendToken> CompletionsBackend::query(const BackendRequest& request) {
  if (request.mode == ScoringMode::MLM) throw MaskUnsupported("completions endpoints cannot score masked tokens");
  return parse_response(post_json(descriptor_.endpoint, limiter_.get(), request_body(request.text)));
}

}  // namespace causalread
