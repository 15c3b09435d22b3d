#include "vrcli/remote_lm.h"

#include <cstdlib>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "vrcli/errors.h"
#include "vrcli/text.h"

namespace vrcli {

using nlohmann::json;

RemoteConfig RemoteConfig::from_env(std::string model) {
  RemoteConfig cfg;
  cfg.model = std::move(model);
  if (const char* base = std::getenv("VRCLI_API_BASE")) cfg.api_base = base;
  if (const char* key = std::getenv("VRCLI_API_KEY")) cfg.api_key = key;
  return cfg;
}

CompletionLogprobs parse_completion_response(std::string_view body) {
  auto malformed = [](const std::string& why) {
    return BackendError("malformed completion response: " + why, /*retryable=*/false, 1);
  };
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw malformed(e.what());
  }
  if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
    throw malformed("missing choices");
  const json& choice = doc["choices"][0];
  CompletionLogprobs out;
  if (choice.contains("text") && choice["text"].is_string()) out.text = choice["text"];
  if (!choice.contains("logprobs") || choice["logprobs"].is_null()) return out;
  const json& lp = choice["logprobs"];
  if (!lp.contains("tokens") || !lp["tokens"].is_array() || !lp.contains("token_logprobs") ||
      !lp["token_logprobs"].is_array())
    throw malformed("logprobs lacks tokens/token_logprobs arrays");
  if (lp["tokens"].size() != lp["token_logprobs"].size())
    throw malformed("tokens and token_logprobs differ in length");
  for (const auto& t : lp["tokens"]) {
    if (!t.is_string()) throw malformed("non-string token");
    out.tokens.push_back(t.get<std::string>());
  }
  for (const auto& v : lp["token_logprobs"]) {
    if (v.is_null()) {
      out.token_logprobs.emplace_back(std::nullopt);
    } else if (v.is_number()) {
      out.token_logprobs.emplace_back(v.get<double>());
    } else {
      throw malformed("non-numeric logprob");
    }
  }
  return out;
}

ScoredCompletion slice_completion(const CompletionLogprobs& echoed, std::size_t prompt_tokens) {
  if (echoed.token_logprobs.size() <= prompt_tokens)
    throw BackendError("echoed response has " + std::to_string(echoed.token_logprobs.size()) +
                           " tokens, not more than the " + std::to_string(prompt_tokens) +
                           " prompt tokens",
                       false, 1);
  ScoredCompletion out;
  for (std::size_t i = prompt_tokens; i < echoed.token_logprobs.size(); ++i) {
    if (!echoed.token_logprobs[i])
      throw BackendError("completion token " + std::to_string(i) + " has no logprob", false, 1);
    out.token_logprobs.push_back(*echoed.token_logprobs[i]);
  }
  return out;
}

struct RemoteLm::Impl {
  explicit Impl(int max_inflight) : inflight(std::max(1, max_inflight)) {}
  std::counting_semaphore<1024> inflight;
};

RemoteLm::RemoteLm(RemoteConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>(config_.max_inflight)) {
  if (config_.api_base.empty()) throw InvalidArgument("remote backend: api_base is empty (set VRCLI_API_BASE)");
  if (config_.model.empty()) throw InvalidArgument("remote backend: model name is empty");
  if (config_.max_attempts < 1) throw InvalidArgument("remote backend: max_attempts must be >= 1");
}

RemoteLm::~RemoteLm() = default;

std::string RemoteLm::post(const std::string& body) const {
  impl_->inflight.acquire();
  struct Release {
    Impl* impl;
    ~Release() { impl->inflight.release(); }
  } release{impl_.get()};

  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1) std::this_thread::sleep_for(config_.initial_backoff * (1 << (attempt - 2)));
    httplib::Client client(config_.api_base);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    auto res = client.Post(config_.completions_path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw BackendError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200),
                         false, attempt);
    return res->body;
  }
  throw BackendError("remote request failed after " + std::to_string(config_.max_attempts) +
                         " attempts: " + last_error,
                     true, config_.max_attempts);
}

CompletionLogprobs RemoteLm::echo(std::string_view text) const {
  json req = {{"model", config_.model}, {"prompt", std::string(text)},
              {"max_tokens", 0},        {"temperature", 1.0},
              {"top_p", 1.0},           {"logprobs", 1},
              {"echo", true}};
  return parse_completion_response(post(req.dump()));
}

std::size_t RemoteLm::count_tokens(std::string_view text) const {
  const std::uint64_t key = fnv1a64(text) ^ (text.size() * 0x9e3779b97f4a7c15ULL);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = token_count_cache_.find(key); it != token_count_cache_.end()) return it->second;
  }
  const std::size_t n = echo(text).tokens.size();
  std::lock_guard lock(cache_mutex_);
  token_count_cache_[key] = n;
  return n;
}

ScoredCompletion RemoteLm::score(std::string_view prompt, std::string_view completion) const {
  if (trim(completion).empty()) throw InvalidArgument("cannot score an empty completion");
  const std::size_t prompt_tokens = count_tokens(prompt);
  std::string joined(prompt);
  joined.append(completion);
  ScoredCompletion scored = slice_completion(echo(joined), prompt_tokens);
  scored.validate();
  return scored;
}

std::string RemoteLm::sample(std::string_view prompt, const SamplingParams& params) const {
  params.validate();
  if (params.max_tokens == 0) return {};
  json req = {{"model", config_.model},         {"prompt", std::string(prompt)},
              {"max_tokens", params.max_tokens}, {"temperature", params.temperature},
              {"top_p", params.top_p},           {"logprobs", nullptr},
              {"echo", false}};
  if (params.top_k > 0) req["top_k"] = params.top_k;
  if (params.min_tokens > 0) req["min_tokens"] = params.min_tokens;
  if (!params.stop_markers.empty()) req["stop"] = params.stop_markers;
  if (params.seed) req["seed"] = *params.seed;
  return parse_completion_response(post(req.dump())).text;
}

}  // namespace vrcli
