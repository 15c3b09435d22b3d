#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vrcli/lm.h"

namespace vrcli {

struct RemoteConfig {
  // Scheme, host and optional port, e.g. "http://127.0.0.1:8000".
  std::string api_base;
  std::string api_key;
  std::string model;
  std::string completions_path = "/v1/completions";
  int max_attempts = 3;
  // Backoff before retry k (1-based) is initial_backoff * 2^(k-1).
  std::chrono::milliseconds initial_backoff{1000};
  int max_inflight = 8;
  std::chrono::seconds timeout{600};

  // Reads VRCLI_API_BASE and VRCLI_API_KEY.
  static RemoteConfig from_env(std::string model);
};

// Per-token data from a completion response with logprobs enabled. The first
// echoed prompt token usually has no logprob (null).
struct CompletionLogprobs {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<std::optional<double>> token_logprobs;
};

// Parses an OpenAI-style completions response body. Throws a non-retryable
// BackendError when fields are missing or mistyped.
CompletionLogprobs parse_completion_response(std::string_view body);

// Keeps the tokens after the first `prompt_tokens` echoed prompt tokens.
ScoredCompletion slice_completion(const CompletionLogprobs& echoed, std::size_t prompt_tokens);

// Completion-style HTTP client. Scoring sends prompt+completion with echo and
// logprobs, max_tokens 0, and slices off the prompt tokens by count.
class RemoteLm final : public LanguageModel {
 public:
  explicit RemoteLm(RemoteConfig config);
  ~RemoteLm() override;

  BackendKind kind() const override { return BackendKind::kRemote; }
  std::string identity() const override { return "remote:" + config_.model; }
  ScoredCompletion score(std::string_view prompt, std::string_view completion) const override;
  std::string sample(std::string_view prompt, const SamplingParams& params) const override;
  std::size_t count_tokens(std::string_view text) const override;

  const RemoteConfig& config() const { return config_; }

 private:
  struct Impl;
  std::string post(const std::string& body) const;
  CompletionLogprobs echo(std::string_view text) const;

  RemoteConfig config_;
  std::unique_ptr<Impl> impl_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::uint64_t, std::size_t> token_count_cache_;
};

}  // namespace vrcli
