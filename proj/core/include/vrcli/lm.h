#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vrcli {

// Natural-log probabilities of each completion token given the prompt and the
// preceding completion tokens.
struct ScoredCompletion {
  std::vector<double> token_logprobs;

  std::size_t token_count() const { return token_logprobs.size(); }
  double sum_logprob() const;
  double mean_logprob() const;
  // Throws InvalidArgument when empty or when a logprob exceeds 1e-9.
  void validate() const;
};

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  int top_k = 0;  // 0 disables top-k filtering
  int max_tokens = 2048;
  int min_tokens = 0;
  std::vector<std::string> stop_markers;
  std::optional<std::uint64_t> seed;

  void validate() const;
};

enum class BackendKind { kTiny, kRemote };

// Scoring and sampling share one tokenizer per backend. Implementations must
// be safe for concurrent score/sample calls on the same instance.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual BackendKind kind() const = 0;
  virtual std::string identity() const = 0;

  virtual ScoredCompletion score(std::string_view prompt, std::string_view completion) const = 0;
  virtual std::string sample(std::string_view prompt, const SamplingParams& params) const = 0;
  virtual std::size_t count_tokens(std::string_view text) const = 0;
};

}  // namespace vrcli
