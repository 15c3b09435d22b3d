#include "vrcli/reward.h"

#include <cmath>
#include <cstdio>
#include <future>
#include <limits>

#include <json.hpp>

#include "vrcli/errors.h"
#include "vrcli/prompts.h"
#include "vrcli/text.h"

namespace vrcli {

using nlohmann::json;

double perplexity(const ScoredCompletion& scored) {
  if (scored.token_logprobs.empty()) throw InvalidArgument("perplexity of an empty completion");
  return std::exp(-scored.mean_logprob());
}

ImprovementScore improvement(double baseline_ppl, double conditioned_ppl) {
  if (!(baseline_ppl > 0.0) || !(conditioned_ppl > 0.0))
    throw InvalidArgument("perplexities must be positive");
  // Written as 100 (b - c) / b so that round numbers stay exact.
  return {baseline_ppl, conditioned_ppl, 100.0 * (baseline_ppl - conditioned_ppl) / baseline_ppl};
}

std::string_view to_string(RewardVariant v) {
  switch (v) {
    case RewardVariant::kPiecewisePpl: return "piecewise_ppl";
    case RewardVariant::kBoundedRaw: return "bounded_raw";
    case RewardVariant::kRaw: return "raw";
    case RewardVariant::kUnboundedNll: return "unbounded_nll";
    case RewardVariant::kUnboundedNegPpl: return "unbounded_negppl";
    case RewardVariant::kNllPiecewise: return "nll_piecewise";
  }
  return "?";
}

RewardVariant parse_reward_variant(std::string_view name) {
  for (auto v : {RewardVariant::kPiecewisePpl, RewardVariant::kBoundedRaw, RewardVariant::kRaw,
                 RewardVariant::kUnboundedNll, RewardVariant::kUnboundedNegPpl,
                 RewardVariant::kNllPiecewise})
    if (to_string(v) == name) return v;
  throw InvalidArgument("unknown reward variant '" + std::string(name) + "'");
}

void RewardConfig::validate() const {
  if (!(thresholds[0] < thresholds[1] && thresholds[1] < thresholds[2]))
    throw InvalidArgument("reward thresholds must be strictly increasing");
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (levels[i] < levels[i - 1]) throw InvalidArgument("reward levels must be non-decreasing");
  if (variant == RewardVariant::kPiecewisePpl || variant == RewardVariant::kNllPiecewise) {
    for (double l : levels)
      if (l < 0.0 || l > 1.0) throw InvalidArgument("piecewise reward levels must lie in [0, 1]");
  }
}

double piecewise_reward(double improvement, const RewardConfig& cfg) {
  if (improvement < cfg.thresholds[0]) return cfg.levels[0];
  if (improvement < cfg.thresholds[1]) return cfg.levels[1];
  if (improvement < cfg.thresholds[2]) return cfg.levels[2];
  return cfg.levels[3];
}

double nll_improvement(double baseline_ppl, double conditioned_ppl) {
  const double base = std::log(baseline_ppl);
  const double cond = std::log(conditioned_ppl);
  if (base <= 0.0) return cond <= 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return (1.0 - cond / base) * 100.0;
}

double reward(const ImprovementScore& score, const RewardConfig& cfg) {
  switch (cfg.variant) {
    case RewardVariant::kPiecewisePpl: return piecewise_reward(score.improvement, cfg);
    case RewardVariant::kBoundedRaw: return std::max(0.0, score.improvement);
    case RewardVariant::kRaw: return score.improvement;
    case RewardVariant::kUnboundedNll: return -std::log(score.conditioned_ppl);
    case RewardVariant::kUnboundedNegPpl: return -score.conditioned_ppl;
    case RewardVariant::kNllPiecewise:
      return piecewise_reward(nll_improvement(score.baseline_ppl, score.conditioned_ppl), cfg);
  }
  throw InvalidArgument("unknown reward variant");
}

BaselineCache::BaselineCache(Header header, std::map<std::string, double> by_key,
                             std::map<std::string, std::string> ids_by_key)
    : header_(std::move(header)), by_key_(std::move(by_key)), ids_by_key_(std::move(ids_by_key)) {
  for (const auto& [key, ppl] : by_key_)
    if (!(ppl > 0.0)) throw InvalidArgument("baseline perplexity must be positive for " + key);
}

std::string BaselineCache::key_for(std::string_view template_version, std::string_view example_id) {
  std::string material(template_version);
  material.push_back('\x1f');
  material.append(example_id);
  return hex64(fnv1a64(material));
}

bool BaselineCache::contains(std::string_view example_id) const {
  return by_key_.contains(key_for(header_.template_version, example_id));
}

double BaselineCache::baseline_ppl(std::string_view example_id) const {
  const auto it = by_key_.find(key_for(header_.template_version, example_id));
  if (it == by_key_.end())
    throw InvalidArgument("baseline cache has no entry for example " + std::string(example_id));
  return it->second;
}

std::string BaselineCache::serialize() const {
  std::string body;
  for (const auto& [key, ppl] : by_key_) {
    json rec = {{"key", key}, {"ppl", ppl}};
    if (auto it = ids_by_key_.find(key); it != ids_by_key_.end()) rec["example_id"] = it->second;
    body += rec.dump() + "\n";
  }
  json head = {{"format", "vrcli-baseline-cache"},
               {"version", 1},
               {"template_version", header_.template_version},
               {"backend", header_.backend_identity},
               {"created", header_.created},
               {"config_hash", header_.config_hash},
               {"seed", header_.seed},
               {"stage_version", header_.stage_version},
               {"entries", by_key_.size()},
               {"content_hash", hex64(fnv1a64(body))}};
  return head.dump() + "\n" + body;
}

BaselineCache BaselineCache::deserialize(std::string_view data) {
  const auto lines = split_lines(data);
  if (lines.empty()) throw InvalidArgument("empty baseline cache file");
  Header header;
  std::map<std::string, double> by_key;
  std::map<std::string, std::string> ids;
  try {
    const json head = json::parse(lines[0]);
    if (head.value("format", "") != "vrcli-baseline-cache")
      throw InvalidArgument("not a baseline cache file");
    header.template_version = head.at("template_version");
    header.backend_identity = head.at("backend");
    header.created = head.value("created", "");
    header.config_hash = head.value("config_hash", "");
    header.seed = head.value("seed", std::uint64_t{0});
    header.stage_version = head.value("stage_version", "");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) continue;
      const json rec = json::parse(lines[i]);
      const std::string key = rec.at("key");
      by_key[key] = rec.at("ppl").get<double>();
      if (rec.contains("example_id")) ids[key] = rec["example_id"];
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed baseline cache: ") + e.what());
  }
  return BaselineCache(std::move(header), std::move(by_key), std::move(ids));
}

BaselineCache build_baseline_cache(std::span<const NcpExample> examples,
                                   const LanguageModel& generator, std::string created,
                                   int max_inflight) {
  struct Outcome {
    double ppl = 0.0;
    std::string error;
  };
  auto score_one = [&](const NcpExample& ex) -> Outcome {
    try {
      const auto scored = generator.score(assemble_generation_prompt(ex.story_information),
                                          ex.gold_next_chapter.text);
      return {perplexity(scored), {}};
    } catch (const std::exception& e) {
      return {0.0, e.what()};
    }
  };

  std::vector<Outcome> outcomes(examples.size());
  const std::size_t width = static_cast<std::size_t>(std::max(1, max_inflight));
  for (std::size_t start = 0; start < examples.size(); start += width) {
    const std::size_t stop = std::min(examples.size(), start + width);
    if (width == 1) {
      outcomes[start] = score_one(examples[start]);
      continue;
    }
    std::vector<std::future<Outcome>> pending;
    for (std::size_t i = start; i < stop; ++i)
      pending.push_back(std::async(std::launch::async, score_one, std::cref(examples[i])));
    for (std::size_t i = start; i < stop; ++i) outcomes[i] = pending[i - start].get();
  }

  BaselineCache::Header header;
  header.template_version = std::string(kPromptTemplateVersion);
  header.backend_identity = generator.identity();
  header.created = std::move(created);
  std::map<std::string, double> by_key;
  std::map<std::string, std::string> ids;
  std::vector<BaselineBuildFailure> failures;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const std::string id = examples[i].id();
    if (!outcomes[i].error.empty()) {
      failures.push_back({id, outcomes[i].error});
      continue;
    }
    const std::string key = BaselineCache::key_for(header.template_version, id);
    by_key[key] = outcomes[i].ppl;
    ids[key] = id;
  }
  if (!failures.empty()) {
    const std::string message = "baseline cache incomplete: " + std::to_string(failures.size()) +
                                " of " + std::to_string(examples.size()) +
                                " examples failed (first: " + failures.front().example_id + ": " +
                                failures.front().error + ")";
    throw BaselineBuildError(message, std::move(failures));
  }
  return BaselineCache(std::move(header), std::move(by_key), std::move(ids));
}

}  // namespace vrcli
