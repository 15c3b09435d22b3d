#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "fixtures.h"
#include "oracles.h"
#include "vrcli/errors.h"
#include "vrcli/grpo.h"
#include "vrcli/prompts.h"
#include "vrcli/synthetic.h"

using namespace vrcli;

TEST(ExtractPlan, SingleMarker) {
  const auto e = extract_plan("reasoning... ### In summary: PLAN");
  EXPECT_EQ(e.plan, "PLAN");
  EXPECT_FALSE(e.parse_failure);
}

TEST(ExtractPlan, LastMarkerWins) {
  EXPECT_EQ(extract_plan("a In summary: first. b in SUMMARY: second").plan, "second");
}

TEST(ExtractPlan, MarkerlessFallsBackToWholeTrace) {
  const auto e = extract_plan("just thinking out loud");
  EXPECT_EQ(e.plan, "just thinking out loud");
  EXPECT_TRUE(e.parse_failure);
}

TEST(ExtractPlan, EmptyMarkerListUsesWholeTrace) {
  PlanMarkerConfig cfg;
  cfg.markers.clear();
  const auto e = extract_plan("h3", cfg);
  EXPECT_EQ(e.plan, "h3");
  EXPECT_FALSE(e.parse_failure);
}

TEST(GroupAdvantages, EqualRewardsGiveZero) {
  for (double a : group_advantages(std::vector<double>{0.5, 0.5, 0.5})) EXPECT_EQ(a, 0.0);
}

TEST(GroupAdvantages, HandComputedPopulationStd) {
  const auto a = group_advantages(std::vector<double>{1, 0, 0, 0});
  // mean 1/4, population std sqrt(3)/4.
  const double s = std::sqrt(3.0) / 4.0;
  EXPECT_NEAR(a[0], 0.75 / s, 1e-12);
  EXPECT_NEAR(a[0], 1.7320508075688772, 1e-12);
  for (int j = 1; j < 4; ++j) EXPECT_NEAR(a[j], -0.25 / s, 1e-12);
  EXPECT_NEAR(a[1], -0.5773502691896258, 1e-12);
}

TEST(GroupAdvantages, SingletonRejected) {
  EXPECT_THROW(group_advantages(std::vector<double>{1.0}), InvalidArgument);
}

TEST(GroupAdvantages, StandardizedAndAffineInvariant) {
  Rng rng(3);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> r(2 + rng.below(20));
    for (auto& x : r) x = rng.uniform() * 10 - 5;
    const auto a = group_advantages(r);
    double m = 0, v = 0;
    for (double x : a) m += x;
    m /= static_cast<double>(a.size());
    for (double x : a) v += (x - m) * (x - m);
    v /= static_cast<double>(a.size());
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(v), 1.0, 1e-6);
    const double shift = rng.uniform() * 100 - 50;
    const double scale = 0.01 + rng.uniform() * 100;
    std::vector<double> shifted = r, scaled = r;
    for (auto& x : shifted) x += shift;
    for (auto& x : scaled) x *= scale;
    const auto as = group_advantages(shifted);
    const auto ak = group_advantages(scaled);
    for (std::size_t j = 0; j < r.size(); ++j) {
      EXPECT_NEAR(as[j], a[j], 1e-6);
      EXPECT_NEAR(ak[j], a[j], 1e-6);
    }
  }
}

namespace {

std::vector<GroupRollout> random_groups(Rng& rng, int groups, int g) {
  const std::vector<std::string> vocab = {"s0", "s1", "s2", "s3", "zz"};
  std::vector<GroupRollout> out;
  for (int k = 0; k < groups; ++k) {
    GroupRollout gr;
    gr.prompt = oracle::random_words(rng, vocab, 2 + rng.below(3));
    std::vector<double> rewards;
    for (int j = 0; j < g; ++j) {
      gr.traces.push_back(oracle::random_words(rng, vocab, 1 + rng.below(5)));
      rewards.push_back(rng.uniform());
    }
    gr.advantages = group_advantages(rewards);
    out.push_back(gr);
  }
  return out;
}

}  // namespace

TEST(GrpoGradient, ObjectiveMatchesDirectComputation) {
  Rng rng(41);
  for (int t = 0; t < 10; ++t) {
    const auto ref = oracle::random_policy(rng, 5, 2, 6);
    const auto pi = oracle::random_policy(rng, 5, 2, 6);
    const auto groups = random_groups(rng, 2, 4);
    EXPECT_NEAR(grpo_objective(pi, ref, groups, 0.3), oracle::grpo_surrogate(pi, ref, groups, 0.3), 1e-12);
  }
}

TEST(GrpoGradient, MatchesFiniteDifferences) {
  Rng rng(50);
  for (int t = 0; t < 50; ++t) {
    auto ref = oracle::random_policy(rng, 5, 2, 6);
    ref.freeze();
    auto pi = oracle::random_policy(rng, 5, 2, 6);
    const auto groups = random_groups(rng, 1 + static_cast<int>(rng.below(3)), 4);
    const double beta = rng.below(2) ? 0.5 : 1e-6;
    const auto grad = grpo_gradient(pi, ref, groups, beta);
    auto f = [&] { return oracle::grpo_surrogate(pi, ref, groups, beta); };
    for (const auto& [ctx, row] : grad)
      for (std::size_t s = 0; s < row.size(); ++s) {
        const double fd = oracle::central_difference(pi, ctx, s, 1e-5, f);
        const double rel = std::abs(row[s] - fd) / std::max(1e-3, std::abs(fd));
        EXPECT_LE(rel, 1e-4) << "instance " << t << " analytic " << row[s] << " fd " << fd;
      }
  }
}

namespace {

struct HintFixture {
  HintTask task = make_hint_task();
  TinyLmBackend generator{task.generator, "generator"};
  BaselineCache cache;
  GrpoConfig cfg;
  HintFixture() {
    std::vector<NcpExample> all = task.train;
    all.insert(all.end(), task.val.begin(), task.val.end());
    cache = build_baseline_cache(all, generator);
    cfg.group_size = 16;
    cfg.rollout_batch = 16;
    cfg.train_batch = 16;
    cfg.max_generation_tokens = 1;
    cfg.plan_markers.markers.clear();
    cfg.seed = 5;
    cfg.learning_rate = 0.5;
  }
};

}  // namespace

TEST(Rollout, OracleTokenEarnsTheGroupMaximum) {
  HintFixture f;
  TinyLmBackend policy(std::make_shared<TinyLmPolicy>(f.task.initial_policy), "policy");
  const auto batch = rollout(policy, std::span(f.task.train).first(4), f.cfg, {}, f.cache, f.generator, 1);
  ASSERT_EQ(batch.groups.size(), 4u);
  int with_oracle = 0;
  for (const auto& g : batch.groups) {
    ASSERT_EQ(g.rewards.size(), 16u);
    const double best = *std::max_element(g.rewards.begin(), g.rewards.end());
    for (std::size_t j = 0; j < g.plans.size(); ++j) {
      if (g.plans[j] == f.task.oracle) {
        ++with_oracle;
        EXPECT_EQ(g.rewards[j], best);
        EXPECT_GT(g.improvements[j], 0.0);
      } else {
        // Every other plan leaves the generator at its baseline.
        EXPECT_NEAR(g.improvements[j], 0.0, 1e-9);
      }
    }
    EXPECT_LE(g.scoring_calls, 16);
  }
  EXPECT_GT(with_oracle, 0);
}

TEST(Rollout, DeterministicPolicySharesOneScoringCall) {
  HintFixture f;
  TinyLmPolicy det = f.task.initial_policy;
  std::vector<double> row(det.vocab_size(), -60.0);
  row[static_cast<std::size_t>(det.symbol_id("h1"))] = 60.0;
  for (const auto& ex : f.task.train) {
    auto ids = det.encode(assemble_reasoning_prompt(ex.story_information));
    det.set_logits(det.context_before(ids, ids.size()), row);
  }
  TinyLmBackend policy(std::make_shared<TinyLmPolicy>(det), "policy");
  const auto batch = rollout(policy, std::span(f.task.train).first(2), f.cfg, {}, f.cache, f.generator, 2);
  for (const auto& g : batch.groups) {
    EXPECT_EQ(g.scoring_calls, 1);
    for (double a : g.advantages) EXPECT_EQ(a, 0.0);
    for (const auto& p : g.plans) EXPECT_EQ(p, "h1");
  }
}

TEST(Rollout, EmptyPlanStillScored) {
  HintFixture f;
  auto cfg = f.cfg;
  // Every one-token trace is itself a marker, so nothing follows it.
  cfg.plan_markers.markers = f.task.candidates;
  TinyLmBackend policy(std::make_shared<TinyLmPolicy>(f.task.initial_policy), "policy");
  const auto batch = rollout(policy, std::span(f.task.train).first(1), cfg, {}, f.cache, f.generator, 3);
  ASSERT_EQ(batch.groups.size(), 1u);
  const auto& g = batch.groups[0];
  int empty = 0;
  for (std::size_t j = 0; j < g.plans.size(); ++j) {
    EXPECT_TRUE(std::isfinite(g.rewards[j]));
    if (!g.plans[j].empty()) continue;
    ++empty;
    EXPECT_FALSE(g.parse_failures[j]);
  }
  EXPECT_GT(empty, 0);
  // The empty plan and at most the "<unk>" plan.
  EXPECT_LE(g.scoring_calls, 2);
}

namespace {

class FlakyGenerator final : public LanguageModel {
 public:
  explicit FlakyGenerator(const LanguageModel& inner, std::string poison) : inner_(inner), poison_(std::move(poison)) {}
  BackendKind kind() const override { return inner_.kind(); }
  std::string identity() const override { return inner_.identity(); }
  ScoredCompletion score(std::string_view prompt, std::string_view completion) const override {
    if (completion == poison_) throw BackendError("scripted failure", true, 3);
    return inner_.score(prompt, completion);
  }
  std::string sample(std::string_view p, const SamplingParams& s) const override { return inner_.sample(p, s); }
  std::size_t count_tokens(std::string_view t) const override { return inner_.count_tokens(t); }

 private:
  const LanguageModel& inner_;
  std::string poison_;
};

}  // namespace

TEST(Rollout, ScoringFailureDropsWholeGroup) {
  HintFixture f;
  const auto subset = std::span(f.task.train).first(3);
  FlakyGenerator flaky(f.generator, subset[1].gold_next_chapter.text);
  TinyLmBackend policy(std::make_shared<TinyLmPolicy>(f.task.initial_policy), "policy");
  auto cfg = f.cfg;
  cfg.max_inflight = 3;
  const auto batch = rollout(policy, subset, cfg, {}, f.cache, flaky, 4);
  EXPECT_EQ(batch.groups.size(), 2u);
  ASSERT_EQ(batch.failed_example_ids.size(), 1u);
  EXPECT_EQ(batch.failed_example_ids[0], subset[1].id());
}

TEST(Rollout, SameSeedSameBatch) {
  HintFixture f;
  TinyLmBackend policy(std::make_shared<TinyLmPolicy>(f.task.initial_policy), "policy");
  const auto a = rollout(policy, std::span(f.task.train).first(3), f.cfg, {}, f.cache, f.generator, 9);
  const auto b = rollout(policy, std::span(f.task.train).first(3), f.cfg, {}, f.cache, f.generator, 9);
  for (std::size_t i = 0; i < a.groups.size(); ++i) EXPECT_EQ(a.groups[i].traces, b.groups[i].traces);
}

TEST(TrainStep, NullUpdateLeavesParametersUnchanged) {
  Rng rng(2);
  auto state = TrainingState::from_initial(oracle::random_policy(rng, 5, 2, 5));
  auto groups = random_groups(rng, 2, 4);
  for (auto& g : groups) std::fill(g.advantages.begin(), g.advantages.end(), 0.0);
  GrpoConfig cfg;
  cfg.kl_coefficient = 0.0;
  const TinyLmPolicy before = *state.policy;
  train_step(state, groups, cfg);
  EXPECT_TRUE(*state.policy == before);
}

TEST(TrainStep, FrozenPolicyRejected) {
  Rng rng(2);
  auto state = TrainingState::from_initial(oracle::random_policy(rng, 5, 2, 5));
  state.policy->freeze();
  EXPECT_THROW(train_step(state, random_groups(rng, 1, 4), GrpoConfig{}), InvalidArgument);
}

TEST(TrainStep, AscendsTheSurrogate) {
  Rng rng(8);
  auto state = TrainingState::from_initial(oracle::random_policy(rng, 5, 2, 5));
  const auto groups = random_groups(rng, 3, 4);
  GrpoConfig cfg;
  cfg.learning_rate = 0.01;
  const double before = grpo_objective(*state.policy, *state.reference, groups, cfg.kl_coefficient);
  train_step(state, groups, cfg);
  EXPECT_GT(grpo_objective(*state.policy, *state.reference, groups, cfg.kl_coefficient), before);
  EXPECT_EQ(state.step, 1);
}

TEST(TrainStep, LargerKlCoefficientMovesLess) {
  Rng rng(19);
  const auto initial = oracle::random_policy(rng, 5, 2, 5);
  const auto groups = random_groups(rng, 3, 4);
  double prev = std::numeric_limits<double>::infinity();
  for (double beta : {0.0, 0.5, 2.0, 8.0}) {
    auto state = TrainingState::from_initial(initial);
    GrpoConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.kl_coefficient = beta;
    for (int k = 0; k < 20; ++k) train_step(state, groups, cfg);
    double dist = 0;
    for (const auto& [ctx, row] : state.policy->table()) {
      const auto base = initial.logits(ctx);
      for (std::size_t s = 0; s < row.size(); ++s) dist += (row[s] - base[s]) * (row[s] - base[s]);
    }
    EXPECT_LE(dist, prev) << "beta " << beta;
    prev = dist;
  }
}

TEST(Train, TinyLearningRateBarelyMovesPolicy) {
  HintFixture f;
  f.cfg.epochs = 1;
  f.cfg.learning_rate = 1e-12;
  auto state = TrainingState::from_initial(f.task.initial_policy);
  const auto res = train(state, f.task.train, f.task.val, f.cfg, {}, f.cache, f.generator);
  EXPECT_EQ(res.history.size(), 1u);
  const auto& init = f.task.initial_policy;
  for (const auto& [ctx, row] : res.best_policy.table()) {
    const auto before = init.logits(ctx);
    for (std::size_t s = 0; s < row.size(); ++s) EXPECT_NEAR(row[s], before[s], 1e-9);
  }
}

TEST(Train, EmptyValidationRejected) {
  HintFixture f;
  auto state = TrainingState::from_initial(f.task.initial_policy);
  EXPECT_THROW(train(state, f.task.train, {}, f.cfg, {}, f.cache, f.generator), InvalidArgument);
}

TEST(Train, HintTaskImprovesOnAverage) {
  HintFixture f;
  f.cfg.epochs = 12;
  auto state = TrainingState::from_initial(f.task.initial_policy);
  std::vector<double> val;
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochRecord& r) { val.push_back(r.val_mean_improvement); };
  const auto res = train(state, f.task.train, f.task.val, f.cfg, {}, f.cache, f.generator, cb);
  ASSERT_EQ(val.size(), 12u);
  const double first = (val[0] + val[1] + val[2]) / 3, last = (val[9] + val[10] + val[11]) / 3;
  EXPECT_GT(last, first);
  EXPECT_GE(res.best_score, *std::max_element(val.begin(), val.end()) - 1e-12);
}

TEST(Checkpoint, RoundTripCarriesProvenance) {
  Rng rng(1);
  const auto p = oracle::random_policy(rng, 5, 2, 4);
  CheckpointMeta meta{3, 12, 1.25, R"({"seed":7})", "abcd", 7, "train-v1"};
  const auto [back, m] = deserialize_checkpoint(serialize_checkpoint(p, meta));
  EXPECT_TRUE(back == p);
  EXPECT_EQ(m.epoch, 3);
  EXPECT_EQ(m.step, 12);
  EXPECT_EQ(m.config_hash, "abcd");
  EXPECT_EQ(m.seed, 7u);
  EXPECT_EQ(m.stage_version, "train-v1");
}

TEST(Metrics, JsonlRecordsAndHook) {
  StepMetrics m;
  m.epoch = 2;
  m.mean_reward = 0.5;
  const auto j = nlohmann::json::parse(to_jsonl(m));
  for (const char* k : {"epoch", "step", "mean_reward", "mean_improvement", "mean_kl", "mean_trace_len", "parse_fail_rate"})
    EXPECT_TRUE(j.contains(k)) << k;
  std::ostringstream out;
  JsonlUpdateHook hook(out);
  GroupRollout g;
  g.prompt = "p";
  g.traces = {"a", "b"};
  g.advantages = {1.0, -1.0};
  g.rewards = {1, 0};
  g.improvements = {1, 0};
  g.trace_lengths = {1, 1};
  g.parse_failures = {false, false};
  g.plans = {"a", "b"};
  g.conditioned_ppl = {1, 1};
  emit_step(std::vector<GroupRollout>{g}, hook);
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto rec = nlohmann::json::parse(line);
    EXPECT_EQ(rec.at("prompt"), "p");
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(GrpoConfig, Validation) {
  GrpoConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.group_size = 1;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  EXPECT_DOUBLE_EQ(GrpoConfig::remote_defaults().learning_rate, 5e-7);
}
