#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vrcli/corpus.h"
#include "vrcli/lm.h"

namespace vrcli {

// exp(-mean ln p) over the completion tokens.
double perplexity(const ScoredCompletion& scored);

// Percent improvement in per-token perplexity from conditioning on a plan:
//   improvement = (1 - conditioned_ppl / baseline_ppl) * 100.
// Positive means the plan made the gold completion more likely.
struct ImprovementScore {
  double baseline_ppl = 1.0;
  double conditioned_ppl = 1.0;
  double improvement = 0.0;
};

ImprovementScore improvement(double baseline_ppl, double conditioned_ppl);

enum class RewardVariant {
  kPiecewisePpl,     // thresholded perplexity improvement (default)
  kBoundedRaw,       // max(0, I)
  kRaw,              // I
  kUnboundedNll,     // mean completion log-likelihood under the plan
  kUnboundedNegPpl,  // -conditioned_ppl
  kNllPiecewise,     // thresholds applied to the NLL percent improvement
};

std::string_view to_string(RewardVariant v);
RewardVariant parse_reward_variant(std::string_view name);

struct RewardConfig {
  RewardVariant variant = RewardVariant::kPiecewisePpl;
  // Left-closed bands: I < t0 -> levels[0]; t0 <= I < t1 -> levels[1];
  // t1 <= I < t2 -> levels[2]; I >= t2 -> levels[3].
  std::array<double, 3> thresholds = {0.05, 1.0, 2.0};
  std::array<double, 4> levels = {0.0, 0.5, 0.9, 1.0};

  void validate() const;
};

double piecewise_reward(double improvement, const RewardConfig& cfg);

// NLL analogue of the perplexity improvement, NLL = -mean logprob = ln(ppl):
//   (1 - nll_conditioned / nll_baseline) * 100.
// A zero baseline NLL yields 0 when the conditioned NLL is also 0 and -inf
// otherwise.
double nll_improvement(double baseline_ppl, double conditioned_ppl);

double reward(const ImprovementScore& score, const RewardConfig& cfg);

// Precomputed PPL(y | x) per example under the Base generation prompt.
// Keys are content hashes of (prompt template version, example id).
class BaselineCache {
 public:
  struct Header {
    std::string template_version;
    std::string backend_identity;
    std::string created;
    // Pipeline provenance; not part of the content hash.
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string stage_version;
  };

  BaselineCache() = default;
  BaselineCache(Header header, std::map<std::string, double> by_key,
                std::map<std::string, std::string> ids_by_key);

  static std::string key_for(std::string_view template_version, std::string_view example_id);

  const Header& header() const { return header_; }
  void set_provenance(std::string config_hash, std::uint64_t seed, std::string stage_version) {
    header_.config_hash = std::move(config_hash);
    header_.seed = seed;
    header_.stage_version = std::move(stage_version);
  }
  bool contains(std::string_view example_id) const;
  // Throws InvalidArgument on a miss.
  double baseline_ppl(std::string_view example_id) const;
  std::size_t size() const { return by_key_.size(); }
  const std::map<std::string, double>& entries() const { return by_key_; }

  // Header line plus one record per example; records are sorted by key so the
  // body is byte-stable.
  std::string serialize() const;
  static BaselineCache deserialize(std::string_view data);

 private:
  Header header_;
  std::map<std::string, double> by_key_;
  std::map<std::string, std::string> ids_by_key_;
};

struct BaselineBuildFailure {
  std::string example_id;
  std::string error;
};

class BaselineBuildError : public std::runtime_error {
 public:
  BaselineBuildError(const std::string& what, std::vector<BaselineBuildFailure> failures)
      : std::runtime_error(what), failures_(std::move(failures)) {}
  const std::vector<BaselineBuildFailure>& failures() const { return failures_; }

 private:
  std::vector<BaselineBuildFailure> failures_;
};

// Scores every example's gold chapter under the Base generation prompt. All
// failures are collected, then BaselineBuildError is thrown if any occurred.
BaselineCache build_baseline_cache(std::span<const NcpExample> examples,
                                   const LanguageModel& generator, std::string created = {},
                                   int max_inflight = 1);

}  // namespace vrcli
