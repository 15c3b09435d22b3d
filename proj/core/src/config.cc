#include "vrcli/config.h"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vrcli/text.h"

namespace vrcli {

using nlohmann::json;

namespace {

std::string describe(const std::vector<ConfigIssue>& issues) {
  std::string msg = "invalid configuration:";
  for (const auto& i : issues) msg += "\n  " + i.field + ": " + i.message;
  return msg;
}

// Reads typed fields out of one JSON object and records problems instead of
// throwing on the first one.
class Reader {
 public:
  Reader(const json& obj, std::string prefix, std::vector<ConfigIssue>& issues)
      : obj_(obj), prefix_(std::move(prefix)), issues_(issues) {
    if (!obj_.is_object()) issue("", "expected an object");
  }
  ~Reader() {
    if (!obj_.is_object()) return;
    for (const auto& [key, value] : obj_.items())
      if (!seen_.contains(key)) issue(key, "unknown key");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      issue(key, "wrong type (got " + std::string(obj_.at(key).type_name()) + ")");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
    return &obj_.at(key);
  }

  void issue(const std::string& key, const std::string& message) {
    issues_.push_back({key.empty() ? prefix_ : (prefix_.empty() ? key : prefix_ + "." + key), message});
  }
  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

 private:
  const json& obj_;
  std::string prefix_;
  std::vector<ConfigIssue>& issues_;
  std::set<std::string> seen_;
};

void check(std::vector<ConfigIssue>& issues, bool ok, std::string field, std::string message) {
  if (!ok) issues.push_back({std::move(field), std::move(message)});
}

void read_sampling(const json& j, const std::string& prefix, SamplingParams& sp,
                   std::vector<ConfigIssue>& issues) {
  Reader r(j, prefix, issues);
  r.get("temperature", sp.temperature);
  r.get("top_p", sp.top_p);
  r.get("top_k", sp.top_k);
  r.get("max_tokens", sp.max_tokens);
  r.get("min_tokens", sp.min_tokens);
  r.get("stop_markers", sp.stop_markers);
  std::uint64_t seed = 0;
  r.get("seed", seed);
  if (j.is_object() && j.contains("seed")) sp.seed = seed;
  check(issues, sp.temperature > 0, prefix + ".temperature", "must be > 0");
  check(issues, sp.top_p > 0 && sp.top_p <= 1, prefix + ".top_p", "must be in (0, 1]");
  check(issues, sp.top_k >= 0, prefix + ".top_k", "must be >= 0");
  check(issues, sp.min_tokens >= 0 && sp.max_tokens >= sp.min_tokens, prefix + ".max_tokens",
        "must satisfy max_tokens >= min_tokens >= 0");
}

json sampling_json(const SamplingParams& sp) {
  json j = {{"temperature", sp.temperature}, {"top_p", sp.top_p},           {"top_k", sp.top_k},
            {"max_tokens", sp.max_tokens},   {"min_tokens", sp.min_tokens}, {"stop_markers", sp.stop_markers}};
  if (sp.seed) j["seed"] = *sp.seed;
  return j;
}

}  // namespace

ConfigError::ConfigError(std::vector<ConfigIssue> issues)
    : InvalidArgument(describe(issues)), issues_(std::move(issues)) {}

EnvLookup process_env() {
  return [](std::string_view name) -> std::optional<std::string> {
    if (const char* v = std::getenv(std::string(name).c_str())) return std::string(v);
    return std::nullopt;
  };
}

std::string interpolate_env(std::string_view text, const EnvLookup& env, std::vector<std::string>* missing) {
  std::string out;
  for (std::size_t i = 0; i < text.size();) {
    if (text.substr(i).starts_with("$${")) {
      out += "${";
      i += 3;
      continue;
    }
    if (text.substr(i).starts_with("${")) {
      const std::size_t close = text.find('}', i + 2);
      if (close != std::string_view::npos) {
        const std::string_view name = text.substr(i + 2, close - i - 2);
        if (auto v = env(name)) out += *v;
        else if (missing) missing->emplace_back(name);
        i = close + 1;
        continue;
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

PipelineConfig parse_pipeline_config(std::string_view json_text, const EnvLookup& env) {
  std::vector<ConfigIssue> issues;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError({{"<document>", std::string("not valid JSON: ") + e.what()}});
  }

  // Interpolate every string value, so secrets can live in the environment.
  std::function<void(json&, const std::string&)> walk = [&](json& node, const std::string& path) {
    if (node.is_string()) {
      std::vector<std::string> missing;
      node = interpolate_env(node.get<std::string>(), env, &missing);
      for (const auto& m : missing) issues.push_back({path, "environment variable " + m + " is not set"});
    } else if (node.is_object()) {
      for (auto& [k, v] : node.items()) walk(v, path.empty() ? k : path + "." + k);
    } else if (node.is_array()) {
      for (std::size_t i = 0; i < node.size(); ++i) walk(node[i], path + "[" + std::to_string(i) + "]");
    }
  };
  walk(doc, "");

  PipelineConfig cfg;
  {
    Reader top(doc, "", issues);
    top.get("seed", cfg.seed);
    std::string backend = "tiny";
    top.get("backend", backend);
    if (backend == "tiny") cfg.backend = BackendKind::kTiny;
    else if (backend == "remote") cfg.backend = BackendKind::kRemote;
    else issues.push_back({"backend", "must be 'tiny' or 'remote'"});
    top.get("max_inflight", cfg.max_inflight);
    check(issues, cfg.max_inflight >= 1, "max_inflight", "must be >= 1");

    if (const json* p = top.child("paths")) {
      Reader r(*p, "paths", issues);
      r.get("corpus", cfg.paths.corpus);
      r.get("data_dir", cfg.paths.data_dir);
      r.get("model", cfg.paths.model);
      r.get("cache", cfg.paths.cache);
      r.get("checkpoints", cfg.paths.checkpoints);
      r.get("reports", cfg.paths.reports);
    }
    if (const json* p = top.child("remote")) {
      Reader r(*p, "remote", issues);
      r.get("api_base", cfg.remote.api_base);
      r.get("api_key", cfg.remote.api_key);
      r.get("generator_model", cfg.remote.generator_model);
      r.get("policy_model", cfg.remote.policy_model);
      r.get("updates_out", cfg.remote.updates_out);
    }
    if (const json* p = top.child("tiny")) {
      Reader r(*p, "tiny", issues);
      r.get("order", cfg.tiny.order);
      r.get("max_vocab", cfg.tiny.max_vocab);
      r.get("smoothing", cfg.tiny.smoothing);
      check(issues, cfg.tiny.order >= 1, "tiny.order", "must be >= 1");
      check(issues, cfg.tiny.smoothing > 0, "tiny.smoothing", "must be > 0");
    }
    if (const json* p = top.child("grpo")) {
      Reader r(*p, "grpo", issues);
      auto& g = cfg.grpo;
      r.get("group_size", g.group_size);
      r.get("learning_rate", g.learning_rate);
      r.get("kl_coefficient", g.kl_coefficient);
      r.get("rollout_batch", g.rollout_batch);
      r.get("train_batch", g.train_batch);
      r.get("epochs", g.epochs);
      r.get("max_generation_tokens", g.max_generation_tokens);
      r.get("validation_samples", g.validation_samples);
      r.get("plan_markers", g.plan_markers.markers);
      std::string selection = "mean_improvement";
      r.get("selection", selection);
      if (selection == "mean_improvement") g.selection = SelectionMetric::kMeanImprovement;
      else if (selection == "mean_reward") g.selection = SelectionMetric::kMeanReward;
      else r.issue("selection", "must be 'mean_improvement' or 'mean_reward'");
      if (const json* s = r.child("sampling")) read_sampling(*s, "grpo.sampling", g.sampling, issues);
      check(issues, g.group_size >= 2, "grpo.group_size", "must be >= 2");
      check(issues, g.learning_rate > 0, "grpo.learning_rate", "must be > 0");
      check(issues, g.kl_coefficient >= 0, "grpo.kl_coefficient", "must be >= 0");
      check(issues, g.rollout_batch >= 1, "grpo.rollout_batch", "must be >= 1");
      check(issues, g.train_batch >= 1, "grpo.train_batch", "must be >= 1");
      check(issues, g.epochs >= 1, "grpo.epochs", "must be >= 1");
      check(issues, g.max_generation_tokens >= 1, "grpo.max_generation_tokens", "must be >= 1");
      check(issues, g.validation_samples >= 1, "grpo.validation_samples", "must be >= 1");
    }
    if (const json* p = top.child("reward")) {
      Reader r(*p, "reward", issues);
      std::string variant = "piecewise_ppl";
      r.get("variant", variant);
      try {
        cfg.reward.variant = parse_reward_variant(variant);
      } catch (const InvalidArgument& e) {
        r.issue("variant", e.what());
      }
      std::vector<double> thresholds(cfg.reward.thresholds.begin(), cfg.reward.thresholds.end());
      std::vector<double> levels(cfg.reward.levels.begin(), cfg.reward.levels.end());
      r.get("thresholds", thresholds);
      r.get("levels", levels);
      if (thresholds.size() != 3) r.issue("thresholds", "needs exactly 3 values");
      else std::copy(thresholds.begin(), thresholds.end(), cfg.reward.thresholds.begin());
      if (levels.size() != 4) r.issue("levels", "needs exactly 4 values");
      else std::copy(levels.begin(), levels.end(), cfg.reward.levels.begin());
      try {
        cfg.reward.validate();
      } catch (const InvalidArgument& e) {
        r.issue("", e.what());
      }
    }
    if (const json* p = top.child("generation")) read_sampling(*p, "generation", cfg.generation, issues);
    if (const json* p = top.child("synthesis")) {
      Reader r(*p, "synthesis", issues);
      auto& s = cfg.synthesis;
      r.get("temperature", s.temperature);
      r.get("top_p", s.top_p);
      r.get("top_k", s.top_k);
      r.get("sketch_max_tokens", s.sketch_max_tokens);
      r.get("sheet_max_tokens", s.sheet_max_tokens);
      r.get("length_ratio", s.length_ratio);
      r.get("max_sheets", s.max_sheets);
      check(issues, s.length_ratio > 0 && s.length_ratio <= 1, "synthesis.length_ratio", "must be in (0, 1]");
      check(issues, s.max_sheets >= 1 && s.max_sheets <= 3, "synthesis.max_sheets", "must be in [1, 3]");
    }
    if (const json* p = top.child("truncation")) {
      Reader r(*p, "truncation", issues);
      auto& t = cfg.truncation;
      r.get("marker_version", t.marker_version);
      r.get("end_markers", t.end_markers);
      r.get("line_min_words", t.line_min_words);
      r.get("line_repeats", t.line_repeats);
      r.get("chunk_words", t.chunk_words);
      r.get("chunk_repeats", t.chunk_repeats);
      r.get("low_diversity_unique", t.low_diversity_unique);
      check(issues, t.line_repeats >= 2, "truncation.line_repeats", "must be >= 2");
      check(issues, t.chunk_repeats >= 2, "truncation.chunk_repeats", "must be >= 2");
      check(issues, t.chunk_words >= 1, "truncation.chunk_words", "must be >= 1");
    }
    if (const json* p = top.child("filter")) {
      Reader r(*p, "filter", issues);
      r.get("min_next_words", cfg.filter.min_next_words);
      r.get("max_words", cfg.filter.max_words);
      r.get("leading_excluded", cfg.filter.leading_excluded);
      r.get("trailing_excluded", cfg.filter.trailing_excluded);
    }
    if (const json* p = top.child("split")) {
      Reader r(*p, "split", issues);
      r.get("train", cfg.split.train);
      r.get("val", cfg.split.val);
      r.get("test", cfg.split.test);
      r.get("enforce_constraints", cfg.enforce_split_constraints);
      check(issues, cfg.split.train >= 0 && cfg.split.val >= 0 && cfg.split.test >= 0, "split",
            "counts must be >= 0");
    }
  }
  if (cfg.backend == BackendKind::kRemote) {
    check(issues, !cfg.remote.api_base.empty(), "remote.api_base", "required for the remote backend");
    check(issues, !cfg.remote.generator_model.empty(), "remote.generator_model",
          "required for the remote backend");
  }
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, const EnvLookup& env) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({{"--config", "cannot read config file " + path.string()}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_config(ss.str(), env);
}

std::string PipelineConfig::canonical_json() const {
  json j = {
      {"seed", seed},
      {"backend", backend == BackendKind::kTiny ? "tiny" : "remote"},
      {"max_inflight", max_inflight},
      {"paths",
       {{"corpus", paths.corpus},
        {"data_dir", paths.data_dir},
        {"model", paths.model},
        {"cache", paths.cache},
        {"checkpoints", paths.checkpoints},
        {"reports", paths.reports}}},
      {"remote",
       {{"api_base", remote.api_base},
        {"api_key", remote.api_key.empty() ? "" : "<redacted>"},
        {"generator_model", remote.generator_model},
        {"policy_model", remote.policy_model},
        {"updates_out", remote.updates_out}}},
      {"tiny", {{"order", tiny.order}, {"max_vocab", tiny.max_vocab}, {"smoothing", tiny.smoothing}}},
      {"grpo",
       {{"group_size", grpo.group_size},
        {"learning_rate", grpo.learning_rate},
        {"kl_coefficient", grpo.kl_coefficient},
        {"rollout_batch", grpo.rollout_batch},
        {"train_batch", grpo.train_batch},
        {"epochs", grpo.epochs},
        {"max_generation_tokens", grpo.max_generation_tokens},
        {"validation_samples", grpo.validation_samples},
        {"plan_markers", grpo.plan_markers.markers},
        {"selection", grpo.selection == SelectionMetric::kMeanImprovement ? "mean_improvement" : "mean_reward"},
        {"sampling", sampling_json(grpo.sampling)}}},
      {"reward",
       {{"variant", std::string(to_string(reward.variant))},
        {"thresholds", reward.thresholds},
        {"levels", reward.levels}}},
      {"generation", sampling_json(generation)},
      {"synthesis",
       {{"temperature", synthesis.temperature},
        {"top_p", synthesis.top_p},
        {"top_k", synthesis.top_k},
        {"sketch_max_tokens", synthesis.sketch_max_tokens},
        {"sheet_max_tokens", synthesis.sheet_max_tokens},
        {"length_ratio", synthesis.length_ratio},
        {"max_sheets", synthesis.max_sheets}}},
      {"truncation",
       {{"marker_version", truncation.marker_version},
        {"end_markers", truncation.end_markers},
        {"line_min_words", truncation.line_min_words},
        {"line_repeats", truncation.line_repeats},
        {"chunk_words", truncation.chunk_words},
        {"chunk_repeats", truncation.chunk_repeats},
        {"low_diversity_unique", truncation.low_diversity_unique}}},
      {"filter",
       {{"min_next_words", filter.min_next_words},
        {"max_words", filter.max_words},
        {"leading_excluded", filter.leading_excluded},
        {"trailing_excluded", filter.trailing_excluded}}},
      {"split",
       {{"train", split.train},
        {"val", split.val},
        {"test", split.test},
        {"enforce_constraints", enforce_split_constraints}}}};
  return j.dump();
}

std::string PipelineConfig::hash() const { return hex64(fnv1a64(canonical_json())); }

}  // namespace vrcli
