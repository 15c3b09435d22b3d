#include "vrcli/grpo.h"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <numeric>

#include <json.hpp>

#include "vrcli/errors.h"
#include "vrcli/prompts.h"
#include "vrcli/rng.h"
#include "vrcli/text.h"

namespace vrcli {

using nlohmann::json;

PlanExtraction extract_plan(std::string_view trace, const PlanMarkerConfig& cfg) {
  if (cfg.markers.empty()) return {std::string(trim(trace)), false};
  const std::string lowered = to_lower_ascii(trace);
  std::size_t best_end = std::string::npos;
  std::size_t best_pos = 0;
  for (const auto& marker : cfg.markers) {
    if (marker.empty()) continue;
    const std::size_t pos = lowered.rfind(to_lower_ascii(marker));
    if (pos == std::string::npos) continue;
    if (best_end == std::string::npos || pos > best_pos) {
      best_pos = pos;
      best_end = pos + marker.size();
    }
  }
  if (best_end == std::string::npos) return {std::string(trim(trace)), true};
  std::string_view rest = trace.substr(best_end);
  while (!rest.empty() && (rest.front() == ':' || rest.front() == '*' || rest.front() == '#' ||
                           std::isspace(static_cast<unsigned char>(rest.front()))))
    rest.remove_prefix(1);
  return {std::string(trim(rest)), false};
}

std::vector<double> group_advantages(std::span<const double> rewards, double eps) {
  if (rewards.size() < 2) throw InvalidArgument("group advantages need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (!(sd > eps)) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

GrpoConfig GrpoConfig::remote_defaults() {
  GrpoConfig cfg;
  cfg.learning_rate = 5e-7;
  return cfg;
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw InvalidArgument("group_size must be >= 2");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (kl_coefficient < 0.0) throw InvalidArgument("kl_coefficient must be >= 0");
  if (rollout_batch < 1 || train_batch < 1) throw InvalidArgument("batch sizes must be >= 1");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (max_generation_tokens < 1) throw InvalidArgument("max_generation_tokens must be >= 1");
  if (validation_samples < 1) throw InvalidArgument("validation_samples must be >= 1");
  sampling.validate();
}

namespace {

SamplingParams trace_params(const GrpoConfig& cfg, std::uint64_t seed, std::string_view id,
                            int sample) {
  SamplingParams p = cfg.sampling;
  p.max_tokens = cfg.max_generation_tokens;
  p.min_tokens = std::min(p.min_tokens, p.max_tokens);
  p.seed = Rng::derive_seed(seed, std::string(id) + "#" + std::to_string(sample));
  return p;
}

std::size_t trace_length(const LanguageModel& policy, const std::string& trace) {
  // Remote token counts would cost a request per trace; words are used instead.
  return policy.kind() == BackendKind::kTiny ? policy.count_tokens(trace) : word_count(trace);
}

GroupRollout rollout_one(const LanguageModel& policy, const NcpExample& ex, const GrpoConfig& cfg,
                         const RewardConfig& reward_cfg, const BaselineCache& baseline,
                         const LanguageModel& generator, std::uint64_t seed) {
  GroupRollout g;
  g.example_id = ex.id();
  g.prompt = assemble_reasoning_prompt(ex.story_information);
  const double base_ppl = baseline.baseline_ppl(g.example_id);
  std::map<std::string, double> ppl_by_plan;
  for (int j = 0; j < cfg.group_size; ++j) {
    std::string trace = policy.sample(g.prompt, trace_params(cfg, seed, g.example_id, j));
    auto extracted = extract_plan(trace, cfg.plan_markers);
    auto it = ppl_by_plan.find(extracted.plan);
    if (it == ppl_by_plan.end()) {
      const auto scored =
          generator.score(assemble_generation_prompt(ex.story_information, extracted.plan),
                          ex.gold_next_chapter.text);
      it = ppl_by_plan.emplace(extracted.plan, perplexity(scored)).first;
      ++g.scoring_calls;
    }
    const ImprovementScore score = improvement(base_ppl, it->second);
    g.trace_lengths.push_back(trace_length(policy, trace));
    g.traces.push_back(std::move(trace));
    g.plans.push_back(std::move(extracted.plan));
    g.parse_failures.push_back(extracted.parse_failure);
    g.conditioned_ppl.push_back(score.conditioned_ppl);
    g.improvements.push_back(score.improvement);
    g.rewards.push_back(reward(score, reward_cfg));
  }
  g.advantages = group_advantages(g.rewards);
  return g;
}

}  // namespace

RolloutBatch rollout(const LanguageModel& policy, std::span<const NcpExample> examples,
                     const GrpoConfig& cfg, const RewardConfig& reward_cfg,
                     const BaselineCache& baseline, const LanguageModel& generator,
                     std::uint64_t seed) {
  cfg.validate();
  reward_cfg.validate();
  for (const auto& ex : examples)
    if (!baseline.contains(ex.id()))
      throw InvalidArgument("baseline cache does not cover example " + ex.id());

  struct Outcome {
    std::optional<GroupRollout> group;
    std::string error;
  };
  auto run = [&](const NcpExample& ex) -> Outcome {
    try {
      return {rollout_one(policy, ex, cfg, reward_cfg, baseline, generator, seed), {}};
    } catch (const BackendError& e) {
      return {std::nullopt, e.what()};
    }
  };

  std::vector<Outcome> outcomes(examples.size());
  const std::size_t width = static_cast<std::size_t>(std::max(1, cfg.max_inflight));
  for (std::size_t start = 0; start < examples.size(); start += width) {
    const std::size_t stop = std::min(examples.size(), start + width);
    if (width == 1) {
      outcomes[start] = run(examples[start]);
      continue;
    }
    std::vector<std::future<Outcome>> pending;
    for (std::size_t i = start; i < stop; ++i)
      pending.push_back(std::async(std::launch::async, run, std::cref(examples[i])));
    for (std::size_t i = start; i < stop; ++i) outcomes[i] = pending[i - start].get();
  }

  RolloutBatch batch;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (outcomes[i].group) {
      batch.groups.push_back(std::move(*outcomes[i].group));
    } else {
      batch.failed_example_ids.push_back(examples[i].id());
      batch.failure_messages.push_back(outcomes[i].error);
    }
  }
  return batch;
}

namespace {

// Visits every trace token with its context and the per-trace weight
// 1 / (groups * G * T_j).
template <typename Fn>
void for_each_trace(const TinyLmPolicy& policy, std::span<const GroupRollout> groups, Fn&& fn) {
  if (groups.empty()) return;
  const double ngroups = static_cast<double>(groups.size());
  for (const auto& g : groups) {
    const auto prompt_ids = policy.encode(g.prompt);
    const double gsize = static_cast<double>(g.traces.size());
    for (std::size_t j = 0; j < g.traces.size(); ++j) {
      const auto trace_ids = policy.encode(g.traces[j]);
      if (trace_ids.empty()) continue;
      const double w = 1.0 / (ngroups * gsize * static_cast<double>(trace_ids.size()));
      fn(prompt_ids, trace_ids, g.advantages[j], w);
    }
  }
}

}  // namespace

double grpo_objective(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                      std::span<const GroupRollout> groups, double kl_coefficient) {
  double total = 0.0;
  for_each_trace(policy, groups,
                 [&](const std::vector<int>& prompt_ids, const std::vector<int>& trace_ids,
                     double advantage, double w) {
                   std::vector<int> all = prompt_ids;
                   all.insert(all.end(), trace_ids.begin(), trace_ids.end());
                   for (std::size_t pos = prompt_ids.size(); pos < all.size(); ++pos) {
                     const auto ctx = policy.context_before(all, pos);
                     const double lp = policy.log_probabilities(ctx)[static_cast<std::size_t>(all[pos])];
                     total += w * (advantage * lp - kl_coefficient * tiny_kl_at(policy, reference, ctx));
                   }
                 });
  return total;
}

GradientTable grpo_gradient(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                            std::span<const GroupRollout> groups, double kl_coefficient) {
  GradientTable grad;
  for_each_trace(policy, groups,
                 [&](const std::vector<int>& prompt_ids, const std::vector<int>& trace_ids,
                     double advantage, double w) {
                   if (advantage != 0.0)
                     accumulate_grad_logprob(policy, prompt_ids, trace_ids, w * advantage, grad);
                   if (kl_coefficient == 0.0) return;
                   std::vector<int> all = prompt_ids;
                   all.insert(all.end(), trace_ids.begin(), trace_ids.end());
                   for (std::size_t pos = prompt_ids.size(); pos < all.size(); ++pos)
                     accumulate_grad_kl(policy, reference, policy.context_before(all, pos),
                                        -w * kl_coefficient, grad);
                 });
  return grad;
}

std::string to_jsonl(const StepMetrics& m) {
  return json{{"epoch", m.epoch},
              {"step", m.step},
              {"mean_reward", m.mean_reward},
              {"mean_improvement", m.mean_improvement},
              {"mean_kl", m.mean_kl},
              {"mean_trace_len", m.mean_trace_len},
              {"parse_fail_rate", m.parse_fail_rate}}
      .dump();
}

void JsonlUpdateHook::emit(const std::string& prompt, const std::string& trace, double advantage) {
  out_ << json{{"prompt", prompt}, {"trace", trace}, {"advantage", advantage}}.dump() << "\n";
}

TrainingState TrainingState::from_initial(const TinyLmPolicy& initial) {
  TrainingState state;
  auto policy = std::make_shared<TinyLmPolicy>(initial);
  auto reference = std::make_shared<TinyLmPolicy>(initial);
  reference->freeze();
  state.policy = std::move(policy);
  state.reference = std::move(reference);
  return state;
}

namespace {

StepMetrics summarize(std::span<const GroupRollout> groups) {
  StepMetrics m;
  double n = 0.0;
  double fails = 0.0;
  for (const auto& g : groups) {
    for (std::size_t j = 0; j < g.rewards.size(); ++j) {
      m.mean_reward += g.rewards[j];
      m.mean_improvement += g.improvements[j];
      m.mean_trace_len += static_cast<double>(g.trace_lengths[j]);
      fails += g.parse_failures[j] ? 1.0 : 0.0;
      n += 1.0;
    }
  }
  if (n > 0) {
    m.mean_reward /= n;
    m.mean_improvement /= n;
    m.mean_trace_len /= n;
    m.parse_fail_rate = fails / n;
  }
  return m;
}

}  // namespace

StepMetrics train_step(TrainingState& state, std::span<const GroupRollout> groups,
                       const GrpoConfig& cfg) {
  if (!state.policy) throw InvalidArgument("training state has no policy");
  if (state.policy->frozen()) throw InvalidArgument("tiny LM policy is frozen; updates rejected");
  StepMetrics m = summarize(groups);

  // Token-averaged KL per trace, averaged over traces.
  double kl_sum = 0.0;
  double traces = 0.0;
  for (const auto& g : groups) {
    const auto prompt_ids = state.policy->encode(g.prompt);
    for (const auto& trace : g.traces) {
      const auto ids = state.policy->encode(trace);
      traces += 1.0;
      if (ids.empty()) continue;
      std::vector<int> all = prompt_ids;
      all.insert(all.end(), ids.begin(), ids.end());
      double kl = 0.0;
      for (std::size_t pos = prompt_ids.size(); pos < all.size(); ++pos)
        kl += tiny_kl_at(*state.policy, *state.reference, state.policy->context_before(all, pos));
      kl_sum += kl / static_cast<double>(ids.size());
    }
  }
  m.mean_kl = traces > 0 ? kl_sum / traces : 0.0;

  const auto grad = grpo_gradient(*state.policy, *state.reference, groups, cfg.kl_coefficient);
  state.policy->add_scaled(grad, cfg.learning_rate);
  ++state.step;
  m.epoch = state.epoch;
  m.step = state.step;
  return m;
}

StepMetrics emit_step(std::span<const GroupRollout> groups, ExternalUpdateHook& hook) {
  StepMetrics m = summarize(groups);
  for (const auto& g : groups)
    for (std::size_t j = 0; j < g.traces.size(); ++j) hook.emit(g.prompt, g.traces[j], g.advantages[j]);
  return m;
}

ValidationResult validate_policy(const LanguageModel& policy, std::span<const NcpExample> examples,
                                 const GrpoConfig& cfg, const RewardConfig& reward_cfg,
                                 const BaselineCache& baseline, const LanguageModel& generator,
                                 std::uint64_t seed) {
  if (examples.empty()) throw InvalidArgument("validation needs at least one example");
  ValidationResult out;
  for (const auto& ex : examples) {
    const std::string id = ex.id();
    const std::string prompt = assemble_reasoning_prompt(ex.story_information);
    const double base_ppl = baseline.baseline_ppl(id);
    double imp = 0.0;
    double rew = 0.0;
    std::map<std::string, double> ppl_by_plan;
    for (int k = 0; k < cfg.validation_samples; ++k) {
      const auto trace = policy.sample(prompt, trace_params(cfg, seed, id, k));
      const auto plan = extract_plan(trace, cfg.plan_markers).plan;
      auto it = ppl_by_plan.find(plan);
      if (it == ppl_by_plan.end()) {
        const auto scored = generator.score(assemble_generation_prompt(ex.story_information, plan),
                                            ex.gold_next_chapter.text);
        it = ppl_by_plan.emplace(plan, perplexity(scored)).first;
      }
      const auto score = improvement(base_ppl, it->second);
      imp += score.improvement;
      rew += reward(score, reward_cfg);
    }
    out.mean_improvement += imp / cfg.validation_samples;
    out.mean_reward += rew / cfg.validation_samples;
  }
  out.mean_improvement /= static_cast<double>(examples.size());
  out.mean_reward /= static_cast<double>(examples.size());
  return out;
}

TrainResult train(TrainingState& state, std::span<const NcpExample> train_examples,
                  std::span<const NcpExample> val_examples, const GrpoConfig& cfg,
                  const RewardConfig& reward_cfg, const BaselineCache& baseline,
                  const LanguageModel& generator, const TrainCallbacks& callbacks) {
  cfg.validate();
  if (val_examples.empty()) throw InvalidArgument("training needs a non-empty validation split");
  if (!state.policy || !state.reference) throw InvalidArgument("training state not initialised");

  TrainResult result{*state.policy, 0, 0.0, {}, {}};
  bool have_best = false;
  const TinyLmBackend sampler(state.policy, "policy");

  std::vector<std::size_t> order(train_examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    state.epoch = epoch;
    Rng shuffle_rng(Rng::derive_seed(cfg.seed, "epoch-order-" + std::to_string(epoch)));
    shuffle_rng.shuffle(std::span(order));
    int steps_this_epoch = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.rollout_batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.rollout_batch));
      std::vector<NcpExample> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train_examples[order[i]]);
      const auto rollout_seed =
          Rng::derive_seed(cfg.seed, "rollout-" + std::to_string(state.step));
      const RolloutBatch rb =
          rollout(sampler, batch, cfg, reward_cfg, baseline, generator, rollout_seed);
      std::span<const GroupRollout> groups(rb.groups);
      for (std::size_t g = 0; g < groups.size(); g += static_cast<std::size_t>(cfg.train_batch)) {
        const auto chunk =
            groups.subspan(g, std::min(groups.size() - g, static_cast<std::size_t>(cfg.train_batch)));
        const StepMetrics m = train_step(state, chunk, cfg);
        result.steps.push_back(m);
        ++steps_this_epoch;
        if (callbacks.on_step) callbacks.on_step(m);
      }
    }

    const auto val = validate_policy(sampler, val_examples, cfg, reward_cfg, baseline, generator,
                                     Rng::derive_seed(cfg.seed, "validation"));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = steps_this_epoch;
    rec.val_mean_improvement = val.mean_improvement;
    rec.val_mean_reward = val.mean_reward;
    rec.selection_score = cfg.selection == SelectionMetric::kMeanImprovement ? val.mean_improvement
                                                                              : val.mean_reward;
    result.history.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
    if (!have_best || rec.selection_score > result.best_score) {
      have_best = true;
      result.best_score = rec.selection_score;
      result.best_epoch = epoch;
      result.best_policy = *state.policy;
    }
  }
  return result;
}

std::string serialize_checkpoint(const TinyLmPolicy& policy, const CheckpointMeta& meta) {
  json head = {{"format", "vrcli-checkpoint"},
               {"version", 1},
               {"epoch", meta.epoch},
               {"step", meta.step},
               {"score", meta.score},
               {"config_hash", meta.config_hash},
               {"seed", meta.seed},
               {"stage_version", meta.stage_version},
               {"config", meta.config_json.empty() ? json::object() : json::parse(meta.config_json)}};
  return head.dump() + "\n" + policy.serialize();
}

std::pair<TinyLmPolicy, CheckpointMeta> deserialize_checkpoint(std::string_view data) {
  const std::size_t nl = data.find('\n');
  if (nl == std::string_view::npos) throw InvalidArgument("malformed checkpoint: no header line");
  CheckpointMeta meta;
  try {
    const json head = json::parse(data.substr(0, nl));
    if (head.value("format", "") != "vrcli-checkpoint")
      throw InvalidArgument("not a checkpoint file");
    meta.epoch = head.at("epoch");
    meta.step = head.at("step");
    meta.score = head.at("score");
    meta.config_json = head.at("config").dump();
    meta.config_hash = head.value("config_hash", "");
    meta.seed = head.value("seed", std::uint64_t{0});
    meta.stage_version = head.value("stage_version", "");
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed checkpoint header: ") + e.what());
  }
  return {TinyLmPolicy::deserialize(data.substr(nl + 1)), meta};
}

}  // namespace vrcli
