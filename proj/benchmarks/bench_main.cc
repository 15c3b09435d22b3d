#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "vrcli/evalkit.h"
#include "vrcli/generation.h"
#include "vrcli/rng.h"
#include "vrcli/tiny_lm.h"

using namespace vrcli;

namespace {

std::vector<std::string> random_tokens(Rng& rng, std::size_t n, std::size_t alphabet) {
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back("w" + std::to_string(rng.below(alphabet)));
  return out;
}

std::string join_words(const std::vector<std::string>& words) { return join(words, " "); }

}  // namespace

// Chapter-length Rouge-L; the LCS is bit-parallel so this should scale close
// to n * m / 64.
static void BM_RougeL(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tokens(rng, n, 500);
  const auto b = random_tokens(rng, n, 500);
  for (auto _ : state) benchmark::DoNotOptimize(rouge_l_words(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_RougeL)->RangeMultiplier(4)->Range(256, 16384)->Complexity();

static void BM_TruncateClean(benchmark::State& state) {
  Rng rng(2);
  const auto text = join_words(random_tokens(rng, static_cast<std::size_t>(state.range(0)), 2000));
  for (auto _ : state) benchmark::DoNotOptimize(truncate_chapter(text));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_TruncateClean)->Arg(1000)->Arg(5000)->Arg(20000);

static void BM_TruncateDegenerate(benchmark::State& state) {
  Rng rng(3);
  std::string text = join_words(random_tokens(rng, 2000, 2000));
  for (int i = 0; i < 50; ++i) text += " ha ha ha ha ha ha ha ha ha ha ha ha ha ha ha ha ha ha ha ha";
  for (auto _ : state) benchmark::DoNotOptimize(truncate_chapter(text));
}
BENCHMARK(BM_TruncateDegenerate);

static void BM_TinyScore(benchmark::State& state) {
  Rng rng(4);
  std::vector<std::string> texts;
  for (int i = 0; i < 20; ++i) texts.push_back(join_words(random_tokens(rng, 500, 300)));
  TinyLmPolicy::FitOptions fo;
  fo.order = static_cast<int>(state.range(1));
  const auto policy = TinyLmPolicy::fit(texts, fo);
  const auto prompt = join_words(random_tokens(rng, 200, 300));
  const auto completion = join_words(random_tokens(rng, static_cast<std::size_t>(state.range(0)), 300));
  for (auto _ : state) benchmark::DoNotOptimize(tiny_score(policy, prompt, completion));
}
BENCHMARK(BM_TinyScore)->Args({500, 2})->Args({2000, 2})->Args({2000, 3});

static void BM_BtFit(benchmark::State& state) {
  Rng rng(5);
  const int variants = static_cast<int>(state.range(0));
  std::vector<double> strength;
  for (int v = 0; v < variants; ++v) strength.push_back(0.5 + 2.5 * rng.uniform());
  std::vector<PairwiseJudgment> js;
  for (int k = 0; k < 5000; ++k) {
    const auto i = rng.below(static_cast<std::uint64_t>(variants));
    auto j = rng.below(static_cast<std::uint64_t>(variants - 1));
    if (j >= i) ++j;
    PairwiseJudgment pj;
    pj.variant_a = "v" + std::to_string(i);
    pj.variant_b = "v" + std::to_string(j);
    pj.choice = rng.uniform() < strength[i] / (strength[i] + strength[j]) ? Choice::kA : Choice::kB;
    js.push_back(pj);
  }
  for (auto _ : state) benchmark::DoNotOptimize(bt_fit(js));
}
BENCHMARK(BM_BtFit)->Arg(4)->Arg(16);
BENCHMARK_MAIN();
