#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vrcli/corpus.h"
#include "vrcli/errors.h"
#include "vrcli/generation.h"
#include "vrcli/grpo.h"
#include "vrcli/lm.h"
#include "vrcli/reward.h"
#include "vrcli/synthesis.h"

namespace vrcli {

struct ConfigIssue {
  std::string field;  // dotted path, e.g. "grpo.group_size"
  std::string message;
};

class ConfigError : public InvalidArgument {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues);
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  std::vector<ConfigIssue> issues_;
};

using EnvLookup = std::function<std::optional<std::string>(std::string_view)>;
EnvLookup process_env();

// Replaces ${NAME} with the variable's value. Unset variables are reported
// through `missing` and expand to the empty string. "$${" escapes a literal "${".
std::string interpolate_env(std::string_view text, const EnvLookup& env,
                            std::vector<std::string>* missing = nullptr);

struct PipelineConfig {
  std::uint64_t seed = 0;
  BackendKind backend = BackendKind::kTiny;
  int max_inflight = 1;

  struct Paths {
    std::string corpus;
    std::string data_dir = "data";
    std::string model;        // tiny generator/reference policy
    std::string cache;        // baseline cache
    std::string checkpoints = "checkpoints";
    std::string reports = "reports";
  } paths;

  struct Remote {
    std::string api_base;
    std::string api_key;
    std::string generator_model;
    std::string policy_model;
    std::string updates_out = "policy_updates.jsonl";
  } remote;

  struct TinyFit {
    int order = 2;
    std::size_t max_vocab = 2000;
    double smoothing = 0.5;
  } tiny;

  GrpoConfig grpo;
  RewardConfig reward;
  SamplingParams generation;
  SynthesisParams synthesis;
  TruncationConfig truncation;
  FilterRules filter;
  SplitCounts split;
  bool enforce_split_constraints = true;

  // Canonical JSON of the effective configuration, secrets redacted.
  std::string canonical_json() const;
  // Hex FNV-1a of canonical_json().
  std::string hash() const;
};

// Unknown keys, wrong types and out-of-range values are collected and thrown
// together as a ConfigError.
PipelineConfig parse_pipeline_config(std::string_view json_text, const EnvLookup& env = process_env());
// Throws ConfigError naming the path when the file cannot be read.
PipelineConfig load_pipeline_config(const std::filesystem::path& path, const EnvLookup& env = process_env());

}  // namespace vrcli
