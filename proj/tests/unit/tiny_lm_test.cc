#include <gtest/gtest.h>

#include <cmath>

#include "oracles.h"
#include "vrcli/errors.h"
#include "vrcli/tiny_lm.h"

using namespace vrcli;

namespace {

TinyLmPolicy bigram_ab() {
  // Symbols a, b and <unk>; after "a" the model puts 0.9 on "b".
  TinyLmPolicy p({"a", "b"}, 2);
  const int a = p.symbol_id("a");
  std::vector<double> row(p.vocab_size());
  row[static_cast<std::size_t>(a)] = std::log(0.05);
  row[static_cast<std::size_t>(p.symbol_id("b"))] = std::log(0.9);
  row[static_cast<std::size_t>(p.unknown_id())] = std::log(0.05);
  p.set_logits({a}, row);
  return p;
}

}  // namespace

TEST(TinyLm, UniformScoreIsLogOneOverV) {
  TinyLmPolicy p({"a", "b", "c"}, 2);
  ASSERT_EQ(p.vocab_size(), 4u);
  for (const char* c : {"a", "b", "c", "zzz"}) {
    const auto s = tiny_score(p, "a b", c);
    ASSERT_EQ(s.token_count(), 1u);
    EXPECT_NEAR(s.token_logprobs[0], std::log(0.25), 1e-12);
  }
}

TEST(TinyLm, HandBuiltBigram) {
  const auto p = bigram_ab();
  const auto s = tiny_score(p, "a", "b");
  ASSERT_EQ(s.token_count(), 1u);
  EXPECT_NEAR(s.token_logprobs[0], std::log(0.9), 1e-12);
}

TEST(TinyLm, DistributionsSumToOne) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto p = oracle::random_policy(rng, 6, 3, 10, 4.0);
    for (const auto& [ctx, row] : p.table()) {
      double s = 0;
      for (double x : p.probabilities(ctx)) s += x;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(TinyLm, ScoresAreNonPositive) {
  Rng rng(8);
  const auto p = oracle::random_policy(rng, 5, 2, 5, 6.0);
  const auto s = tiny_score(p, "s0 s1", "s2 s3 s0 s1 s1");
  EXPECT_EQ(s.token_count(), 5u);
  for (double lp : s.token_logprobs) EXPECT_LE(lp, 1e-9);
  EXPECT_NO_THROW(s.validate());
}

TEST(TinyLm, EmptyCompletionRejected) {
  TinyLmPolicy p({"a"}, 2);
  TinyLmBackend be(std::make_shared<TinyLmPolicy>(p));
  EXPECT_THROW(be.score("a", "   "), InvalidArgument);
}

TEST(TinyLm, ZeroMaxTokensSamplesNothing) {
  TinyLmPolicy p({"a", "b"}, 2);
  TinyLmBackend be(std::make_shared<TinyLmPolicy>(p));
  SamplingParams sp;
  sp.max_tokens = 0;
  EXPECT_EQ(be.sample("a", sp), "");
}

TEST(TinyLm, DegenerateDistributionRepeatsSymbol) {
  TinyLmPolicy p({"a", "b"}, 1);
  std::vector<double> row(p.vocab_size(), -50.0);
  row[static_cast<std::size_t>(p.symbol_id("b"))] = 50.0;
  p.set_logits({}, row);
  TinyLmBackend be(std::make_shared<TinyLmPolicy>(p));
  SamplingParams sp;
  sp.max_tokens = 7;
  sp.seed = 1;
  EXPECT_EQ(be.sample("a", sp), "b b b b b b b");
}

TEST(TinyLm, SampleFrequenciesWithinThreeSigma) {
  TinyLmPolicy p({"x", "y"}, 1);
  p.set_logits({}, {std::log(0.5), std::log(0.3), std::log(0.2)});
  const auto exact = oracle::softmax(p.logits({}));
  SamplingParams sp;
  sp.max_tokens = 10000;
  sp.min_tokens = 10000;
  Rng rng(77);
  const auto ids = tiny_sample_ids(p, std::vector<int>{}, sp, rng);
  ASSERT_EQ(ids.size(), 10000u);
  std::vector<double> counts(3, 0.0);
  for (int id : ids) counts[static_cast<std::size_t>(id)] += 1;
  for (std::size_t s = 0; s < 3; ++s) {
    const double n = 10000.0;
    const double sigma = std::sqrt(n * exact[s] * (1 - exact[s]));
    EXPECT_LE(std::abs(counts[s] - n * exact[s]), 3 * sigma) << "symbol " << s;
  }
}

TEST(TinyLm, SeededSamplingIsReproducible) {
  Rng rng(3);
  auto p = std::make_shared<TinyLmPolicy>(oracle::random_policy(rng, 6, 2, 6));
  TinyLmBackend be(p);
  SamplingParams sp;
  sp.max_tokens = 30;
  sp.seed = 12;
  EXPECT_EQ(be.sample("s1", sp), be.sample("s1", sp));
}

TEST(TinyLm, LowTemperatureFollowsArgmax) {
  Rng rng(21);
  auto p = std::make_shared<TinyLmPolicy>(oracle::random_policy(rng, 5, 2, 30, 3.0));
  TinyLmBackend be(p);
  SamplingParams sp;
  sp.max_tokens = 12;
  sp.temperature = 1e-4;
  sp.seed = 9;
  const auto text = be.sample("s0", sp);
  auto all = p->encode("s0");
  for (int id : p->encode(text)) {
    const auto probs = p->probabilities(p->context_before(all, all.size()));
    const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
    EXPECT_EQ(id, best);
    all.push_back(id);
  }
}

TEST(TinyLm, GradLogprobMatchesFiniteDifferences) {
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    auto p = oracle::random_policy(rng, 5, 2, 8);
    const std::vector<std::string> vocab = {"s0", "s1", "s2", "s3"};
    const auto prompt = oracle::random_words(rng, vocab, 3);
    const auto completion = oracle::random_words(rng, vocab, 6);
    const auto grad = tiny_grad_logprob(p, prompt, completion);
    auto f = [&] { return tiny_score(p, prompt, completion).sum_logprob(); };
    for (const auto& [ctx, row] : grad)
      for (std::size_t s = 0; s < row.size(); ++s) {
        const double fd = oracle::central_difference(p, ctx, s, 1e-5, f);
        EXPECT_NEAR(row[s], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "instance " << t;
      }
  }
}

TEST(TinyLm, SaturatedArgmaxHasNearZeroGradient) {
  TinyLmPolicy p({"a", "b"}, 2);
  const int a = p.symbol_id("a");
  std::vector<double> row(p.vocab_size(), -30.0);
  row[static_cast<std::size_t>(a)] = 30.0;
  p.set_logits({TinyLmPolicy::kBos}, row);
  p.set_logits({a}, row);
  const auto grad = tiny_grad_logprob(p, "", "a a a");
  for (const auto& [ctx, r] : grad)
    for (double g : r) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(TinyLm, FrozenPolicyRejectsUpdates) {
  TinyLmPolicy p({"a", "b"}, 2);
  p.freeze();
  EXPECT_THROW(p.set_logits({TinyLmPolicy::kBos}, {1, 2, 3}), InvalidArgument);
  EXPECT_THROW(tiny_grad_logprob(p, "a", "b"), InvalidArgument);
  EXPECT_THROW(p.add_scaled({}, 1.0), InvalidArgument);
}

TEST(TinyLm, KlIdentityIsZero) {
  Rng rng(4);
  const auto p = oracle::random_policy(rng, 5, 2, 5);
  std::vector<TinyLmPolicy::Context> ctxs;
  for (const auto& [c, r] : p.table()) ctxs.push_back(c);
  for (double v : tiny_kl(p, p, ctxs)) EXPECT_EQ(v, 0.0);
}

TEST(TinyLm, KlMatchesDirectSum) {
  TinyLmPolicy p({"a", "b"}, 1), q({"a", "b"}, 1);
  p.set_logits({}, {std::log(0.7), std::log(0.2), std::log(0.1)});
  q.set_logits({}, {std::log(0.2), std::log(0.5), std::log(0.3)});
  const double expect = 0.7 * std::log(0.7 / 0.2) + 0.2 * std::log(0.2 / 0.5) + 0.1 * std::log(0.1 / 0.3);
  EXPECT_NEAR(tiny_kl_at(p, q, {}), expect, 1e-12);
}

TEST(TinyLm, KlVocabularyMismatchRejected) {
  TinyLmPolicy p({"a", "b"}, 2), q({"a", "c"}, 2);
  EXPECT_THROW(tiny_kl_at(p, q, {TinyLmPolicy::kBos}), InvalidArgument);
}

TEST(TinyLm, KlGradientMatchesFiniteDifferences) {
  Rng rng(13);
  auto p = oracle::random_policy(rng, 5, 2, 4);
  auto q = oracle::random_policy(rng, 5, 2, 4);
  for (const auto& [ctx, row] : p.table()) {
    GradientTable g;
    accumulate_grad_kl(p, q, ctx, 1.0, g);
    auto f = [&] { return tiny_kl_at(p, q, ctx); };
    for (std::size_t s = 0; s < p.vocab_size(); ++s)
      EXPECT_NEAR(g.at(ctx)[s], oracle::central_difference(p, ctx, s, 1e-5, f), 1e-7);
  }
}

TEST(TinyLm, FitIsAddSmoothingEstimate) {
  TinyLmPolicy::FitOptions fo;
  fo.order = 2;
  fo.smoothing = 0.5;
  fo.include_end_symbol = false;
  const std::vector<std::string> texts = {"a b a b a c"};
  const auto p = TinyLmPolicy::fit(texts, fo);
  // After "a": b twice, c once, nothing else.
  const auto probs = p.probabilities({p.symbol_id("a")});
  const double v = static_cast<double>(p.vocab_size());
  const double denom = v + 3.0 / 0.5;
  EXPECT_NEAR(probs[static_cast<std::size_t>(p.symbol_id("b"))], (1 + 2 / 0.5) / denom, 1e-12);
  EXPECT_NEAR(probs[static_cast<std::size_t>(p.symbol_id("c"))], (1 + 1 / 0.5) / denom, 1e-12);
  EXPECT_NEAR(probs[static_cast<std::size_t>(p.symbol_id("a"))], 1 / denom, 1e-12);
}

TEST(TinyLm, SerializeRoundTrip) {
  Rng rng(6);
  const auto p = oracle::random_policy(rng, 6, 3, 12);
  const auto back = TinyLmPolicy::deserialize(p.serialize());
  EXPECT_TRUE(back == p);
  EXPECT_EQ(back.serialize(), p.serialize());
}
