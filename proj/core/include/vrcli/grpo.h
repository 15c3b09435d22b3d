#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vrcli/corpus.h"
#include "vrcli/lm.h"
#include "vrcli/reward.h"
#include "vrcli/tiny_lm.h"

namespace vrcli {

struct PlanMarkerConfig {
  // The plan is the text after the last occurrence of any marker (matched
  // case-insensitively). An empty list treats the whole trace as the plan.
  std::vector<std::string> markers = {"In summary"};
};

struct PlanExtraction {
  std::string plan;
  bool parse_failure = false;
};

PlanExtraction extract_plan(std::string_view trace, const PlanMarkerConfig& cfg = {});

// Group-normalized advantages with the population standard deviation:
// (r - mean) / std, or all zeros when std <= eps. Throws for fewer than 2 rewards.
std::vector<double> group_advantages(std::span<const double> rewards, double eps = 1e-8);

enum class SelectionMetric { kMeanImprovement, kMeanReward };

struct GrpoConfig {
  int group_size = 16;
  // Tiny-LM step size. Remote-scale runs use 5e-7 (see remote_defaults()).
  double learning_rate = 0.05;
  double kl_coefficient = 1e-6;
  int rollout_batch = 64;
  int train_batch = 64;
  int epochs = 20;
  int max_generation_tokens = 2048;
  SamplingParams sampling;
  std::uint64_t seed = 0;
  PlanMarkerConfig plan_markers;
  int validation_samples = 5;
  SelectionMetric selection = SelectionMetric::kMeanImprovement;
  int max_inflight = 1;

  static GrpoConfig remote_defaults();
  void validate() const;
};

struct GroupRollout {
  std::string example_id;
  std::string prompt;
  std::vector<std::string> traces;
  std::vector<std::string> plans;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> improvements;
  std::vector<double> conditioned_ppl;
  std::vector<std::size_t> trace_lengths;
  std::vector<bool> parse_failures;
  // Distinct plans scored by the generator (identical plans share one call).
  int scoring_calls = 0;
};

struct RolloutBatch {
  std::vector<GroupRollout> groups;
  // Examples whose group was dropped because a scoring call failed; they can
  // be retried by a later rollout.
  std::vector<std::string> failed_example_ids;
  std::vector<std::string> failure_messages;
};

// For each example: sample G traces from the reasoning prompt, extract plans,
// score the gold chapter under the plan-augmented generation prompt, convert
// to rewards and group advantages. `seed` fixes all sampling in the batch.
RolloutBatch rollout(const LanguageModel& policy, std::span<const NcpExample> examples,
                     const GrpoConfig& cfg, const RewardConfig& reward_cfg,
                     const BaselineCache& baseline, const LanguageModel& generator,
                     std::uint64_t seed);

// Token-averaged GRPO surrogate for a tiny policy:
//   J = mean_groups mean_j (1/T_j) sum_t [a_j log pi(x_t|c_t) - beta KL_t(pi || ref)]
double grpo_objective(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                      std::span<const GroupRollout> groups, double kl_coefficient);
GradientTable grpo_gradient(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                            std::span<const GroupRollout> groups, double kl_coefficient);

struct StepMetrics {
  int epoch = 0;
  int step = 0;
  double mean_reward = 0.0;
  double mean_improvement = 0.0;
  double mean_kl = 0.0;
  double mean_trace_len = 0.0;
  double parse_fail_rate = 0.0;
};

std::string to_jsonl(const StepMetrics& m);

// Receives (prompt, trace, advantage) records for backends whose weights live
// elsewhere.
class ExternalUpdateHook {
 public:
  virtual ~ExternalUpdateHook() = default;
  virtual void emit(const std::string& prompt, const std::string& trace, double advantage) = 0;
};

class JsonlUpdateHook final : public ExternalUpdateHook {
 public:
  explicit JsonlUpdateHook(std::ostream& out) : out_(out) {}
  void emit(const std::string& prompt, const std::string& trace, double advantage) override;

 private:
  std::ostream& out_;
};

struct TrainingState {
  std::shared_ptr<TinyLmPolicy> policy;
  std::shared_ptr<const TinyLmPolicy> reference;
  int epoch = 0;
  int step = 0;

  // Copies `initial` into a trainable policy and a frozen reference.
  static TrainingState from_initial(const TinyLmPolicy& initial);
};

// Gradient ascent on the GRPO surrogate. Throws on a frozen policy.
StepMetrics train_step(TrainingState& state, std::span<const GroupRollout> groups,
                       const GrpoConfig& cfg);
// Remote-backend variant: emits records to the hook; no local update.
StepMetrics emit_step(std::span<const GroupRollout> groups, ExternalUpdateHook& hook);

struct ValidationResult {
  double mean_improvement = 0.0;
  double mean_reward = 0.0;
};

// Mean over examples of the mean over `cfg.validation_samples` sampled plans.
ValidationResult validate_policy(const LanguageModel& policy, std::span<const NcpExample> examples,
                                 const GrpoConfig& cfg, const RewardConfig& reward_cfg,
                                 const BaselineCache& baseline, const LanguageModel& generator,
                                 std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  double val_mean_improvement = 0.0;
  double val_mean_reward = 0.0;
  double selection_score = 0.0;
};

struct TrainCallbacks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  TinyLmPolicy best_policy;
  int best_epoch = 0;
  double best_score = 0.0;
  std::vector<EpochRecord> history;
  std::vector<StepMetrics> steps;
};

// Runs cfg.epochs epochs over `train`; after each epoch scores `val` and keeps
// the best policy by cfg.selection. Throws InvalidArgument for an empty `val`.
TrainResult train(TrainingState& state, std::span<const NcpExample> train_examples,
                  std::span<const NcpExample> val_examples, const GrpoConfig& cfg,
                  const RewardConfig& reward_cfg, const BaselineCache& baseline,
                  const LanguageModel& generator, const TrainCallbacks& callbacks = {});

struct CheckpointMeta {
  int epoch = 0;
  int step = 0;
  double score = 0.0;
  std::string config_json;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string stage_version;
};

std::string serialize_checkpoint(const TinyLmPolicy& policy, const CheckpointMeta& meta);
std::pair<TinyLmPolicy, CheckpointMeta> deserialize_checkpoint(std::string_view data);

}  // namespace vrcli
