#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fixtures.h"
#include "oracles.h"
#include "vrcli/errors.h"
#include "vrcli/grpo.h"
#include "vrcli/prompts.h"
#include "vrcli/reward.h"
#include "vrcli/tiny_lm.h"

using namespace vrcli;

TEST(Perplexity, HandArithmetic) {
  EXPECT_NEAR(perplexity({{std::log(0.5), std::log(0.125)}}), 4.0, 1e-12);
  EXPECT_EQ(perplexity({{0.0, 0.0, 0.0}}), 1.0);
  EXPECT_THROW(perplexity({}), InvalidArgument);
}

TEST(Perplexity, UniformOverEightSymbols) {
  TinyLmPolicy p({"a", "b", "c", "d", "e", "f", "g"}, 2);
  ASSERT_EQ(p.vocab_size(), 8u);
  EXPECT_NEAR(perplexity(tiny_score(p, "a", "b c d e f g a")), 8.0, 1e-9);
}

TEST(Improvement, FormulaCases) {
  EXPECT_EQ(improvement(10, 10).improvement, 0.0);
  EXPECT_EQ(improvement(10, 9).improvement, 10.0);
  EXPECT_NEAR(improvement(10, 12).improvement, -20.0, 1e-12);
  EXPECT_THROW(improvement(0, 1), InvalidArgument);
  EXPECT_THROW(improvement(1, -1), InvalidArgument);
}

TEST(Improvement, MonotoneAndBoundedOnGrid) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const double base = 1 + rng.uniform() * 50;
    double prev = std::numeric_limits<double>::infinity();
    for (double c = 1.0; c < 60.0; c += 0.37) {
      const auto s = improvement(base, c);
      EXPECT_LT(s.improvement, prev);
      EXPECT_LE(s.improvement, 100.0);
      EXPECT_NEAR(s.improvement, (1 - c / base) * 100, 1e-9);
      prev = s.improvement;
    }
  }
}

TEST(PiecewiseReward, PinnedValues) {
  const RewardConfig cfg;
  EXPECT_EQ(piecewise_reward(-0.06, cfg), 0.0);
  EXPECT_EQ(piecewise_reward(0.05, cfg), 0.5);
  EXPECT_EQ(piecewise_reward(1.5, cfg), 0.9);
  EXPECT_EQ(piecewise_reward(1.0, cfg), 0.9);
  EXPECT_EQ(piecewise_reward(2.0, cfg), 1.0);
  EXPECT_EQ(piecewise_reward(std::nextafter(0.05, 0.0), cfg), 0.0);
  EXPECT_EQ(piecewise_reward(std::nextafter(2.0, 0.0), cfg), 0.9);
}

TEST(PiecewiseReward, MatchesTableOnRandomImprovements) {
  const RewardConfig cfg;
  Rng rng(17);
  for (int t = 0; t < 10000; ++t) {
    const double i = (rng.uniform() - 0.3) * 8;
    EXPECT_EQ(piecewise_reward(i, cfg), oracle::piecewise_table(i)) << i;
  }
}

TEST(Reward, Variants) {
  RewardConfig cfg;
  const auto s = improvement(10, 13);  // -30
  cfg.variant = RewardVariant::kBoundedRaw;
  EXPECT_EQ(reward(s, cfg), 0.0);
  cfg.variant = RewardVariant::kRaw;
  EXPECT_NEAR(reward(s, cfg), -30.0, 1e-12);
  cfg.variant = RewardVariant::kUnboundedNegPpl;
  EXPECT_EQ(reward(s, cfg), -13.0);
  cfg.variant = RewardVariant::kUnboundedNll;
  EXPECT_NEAR(reward(s, cfg), -std::log(13.0), 1e-12);
  cfg.variant = RewardVariant::kNllPiecewise;
  // ln 10 -> ln 8 is a 9.69% NLL improvement.
  EXPECT_EQ(reward(improvement(10, 8), cfg), 1.0);
  EXPECT_EQ(reward(improvement(10, 10), cfg), 0.0);
}

TEST(Reward, VariantNamesRoundTrip) {
  for (auto v : {RewardVariant::kPiecewisePpl, RewardVariant::kBoundedRaw, RewardVariant::kRaw,
                 RewardVariant::kUnboundedNll, RewardVariant::kUnboundedNegPpl, RewardVariant::kNllPiecewise})
    EXPECT_EQ(parse_reward_variant(to_string(v)), v);
  EXPECT_THROW(parse_reward_variant("bogus"), InvalidArgument);
}

TEST(Reward, ConfigValidation) {
  RewardConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.thresholds = {1.0, 1.0, 2.0};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.levels = {0.0, 0.9, 0.5, 1.0};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.levels = {0.0, 0.5, 0.9, 1.5};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(NllImprovement, Definition) {
  EXPECT_NEAR(nll_improvement(std::exp(2.0), std::exp(1.5)), 25.0, 1e-9);
  EXPECT_EQ(nll_improvement(1.0, 1.0), 0.0);
  EXPECT_TRUE(std::isinf(nll_improvement(1.0, 2.0)));
}

TEST(BaselineEquivalence, RawImprovementAndNegPplGiveSameAdvantages) {
  Rng rng(2025);
  for (int t = 0; t < 1000; ++t) {
    const double base = 2 + rng.uniform() * 40;
    const std::size_t g = 2 + rng.below(15);
    std::vector<double> from_i, from_ppl;
    for (std::size_t j = 0; j < g; ++j) {
      const double c = base * (0.7 + rng.uniform() * 0.6);
      from_i.push_back(improvement(base, c).improvement);
      from_ppl.push_back(-c);
    }
    const auto a = group_advantages(from_i);
    const auto b = group_advantages(from_ppl);
    for (std::size_t j = 0; j < g; ++j) EXPECT_NEAR(a[j], b[j], 1e-9);
  }
}

TEST(BaselineCache, UniformGeneratorGivesVocabularySize) {
  auto gen = std::make_shared<TinyLmPolicy>(std::vector<std::string>{"a", "b", "c"}, 2);
  TinyLmBackend be(gen);
  std::vector<NcpExample> one = {fixture::example("b", 3, "a b c a b c a a")};
  const auto cache = build_baseline_cache(one, be);
  EXPECT_NEAR(cache.baseline_ppl(one[0].id()), 4.0, 1e-9);
  EXPECT_THROW(cache.baseline_ppl("missing:1"), InvalidArgument);
}

TEST(BaselineCache, MatchesOneOffScoringAndIsStable) {
  Rng rng(12);
  auto gen = std::make_shared<TinyLmPolicy>(oracle::random_policy(rng, 6, 2, 40, 2.0));
  TinyLmBackend be(gen);
  const std::vector<std::string> vocab = {"s0", "s1", "s2", "s3", "s4"};
  std::vector<NcpExample> examples;
  for (int i = 0; i < 20; ++i)
    examples.push_back(fixture::example("bk" + std::to_string(i), 2 + i % 4, oracle::random_words(rng, vocab, 12)));
  const auto cache = build_baseline_cache(examples, be, "", 4);
  ASSERT_EQ(cache.size(), 20u);
  for (const auto& ex : examples) {
    const double direct =
        perplexity(be.score(assemble_generation_prompt(ex.story_information), ex.gold_next_chapter.text));
    EXPECT_NEAR(cache.baseline_ppl(ex.id()), direct, 1e-12);
  }
  EXPECT_EQ(build_baseline_cache(examples, be).serialize(), cache.serialize());
  const auto back = BaselineCache::deserialize(cache.serialize());
  EXPECT_EQ(back.serialize(), cache.serialize());
  EXPECT_EQ(back.header().template_version, std::string(kPromptTemplateVersion));
}

namespace {

class FailingGenerator final : public LanguageModel {
 public:
  BackendKind kind() const override { return BackendKind::kTiny; }
  std::string identity() const override { return "failing"; }
  ScoredCompletion score(std::string_view, std::string_view completion) const override {
    if (completion.find("bad") != std::string_view::npos) throw BackendError("scripted", true, 3);
    return {{-1.0}};
  }
  std::string sample(std::string_view, const SamplingParams&) const override { return {}; }
  std::size_t count_tokens(std::string_view t) const override { return word_count(t); }
};

}  // namespace

TEST(BaselineCache, FailuresAreCollected) {
  std::vector<NcpExample> examples = {fixture::example("a", 2, "fine"), fixture::example("b", 2, "bad one"),
                                      fixture::example("c", 2, "bad two")};
  try {
    build_baseline_cache(examples, FailingGenerator{});
    FAIL();
  } catch (const BaselineBuildError& e) {
    EXPECT_EQ(e.failures().size(), 2u);
  }
}
