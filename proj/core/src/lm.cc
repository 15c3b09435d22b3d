#include "vrcli/lm.h"

#include <numeric>

#include "vrcli/errors.h"

namespace vrcli {

double ScoredCompletion::sum_logprob() const {
  return std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0);
}

double ScoredCompletion::mean_logprob() const {
  if (token_logprobs.empty()) throw InvalidArgument("scored completion has no tokens");
  return sum_logprob() / static_cast<double>(token_logprobs.size());
}

void ScoredCompletion::validate() const {
  if (token_logprobs.empty()) throw InvalidArgument("scored completion has no tokens");
  for (double lp : token_logprobs) {
    if (!(lp <= 1e-9)) throw InvalidArgument("token logprob above zero: " + std::to_string(lp));
  }
}

void SamplingParams::validate() const {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("top_p must be in (0, 1]");
  if (top_k < 0) throw InvalidArgument("top_k must be >= 0");
  if (min_tokens < 0 || max_tokens < min_tokens)
    throw InvalidArgument("need max_tokens >= min_tokens >= 0");
}

}  // namespace vrcli
