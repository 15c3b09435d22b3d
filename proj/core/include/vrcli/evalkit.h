#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vrcli/corpus.h"

namespace vrcli {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Longest common subsequence length of two token sequences, computed with a
// bit-parallel row update (64 cells per machine word).
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

// Rouge-L over metric words (case-folded, punctuation stripped). Throws
// InvalidArgument when either side has no words.
RougeScore rouge_l(std::string_view candidate, std::string_view reference);
RougeScore rouge_l_words(std::span<const std::string> candidate, std::span<const std::string> reference);

struct LexicalReport {
  std::size_t word_count = 0;
  double pct_unique_words = 0.0;
  // Empty when the chapter has fewer than 3 words.
  std::optional<double> pct_unseen_trigrams;
  double rouge_l_f1 = 0.0;
  double rouge_l_precision = 0.0;
  // Rouge-L precision of the chapter against each story-information element.
  std::map<std::string, double> si_element_precision;
};

// Unseen trigrams are counted against the union of trigrams of the individual
// SI elements; no trigram spans two elements. The character sheets are one
// element holding every sheet's name and text.
LexicalReport lexical_metrics(std::string_view chapter, const StoryInformation& si,
                              std::string_view reference);

enum class Dimension { kPlot, kCharacter, kCreativity, kDevelopment, kLanguage, kOverall };
inline constexpr Dimension kAllDimensions[] = {Dimension::kPlot,        Dimension::kCharacter,
                                               Dimension::kCreativity,  Dimension::kDevelopment,
                                               Dimension::kLanguage,    Dimension::kOverall};
enum class Choice { kA, kB, kSame };

std::string_view to_string(Dimension d);
std::string_view to_string(Choice c);
Dimension parse_dimension(std::string_view name);
Choice parse_choice(std::string_view name);

struct PairwiseJudgment {
  std::string comparison_id;
  std::string example_id;  // used for genre breakdowns
  std::string variant_a;
  std::string variant_b;
  Dimension dimension = Dimension::kOverall;
  Choice choice = Choice::kSame;
  std::string annotator_id;
  double duration_seconds = 0.0;
  std::string justification;
};

struct BtOptions {
  double tolerance = 1e-10;  // max relative strength change between iterations
  int max_iterations = 10000;
  // Virtual wins added in both directions for every compared pair. Zero keeps
  // the plain likelihood, which has no finite maximum when some variant never
  // loses (or never wins) against the rest.
  double pseudo_count = 0.0;
};

struct BtResult {
  std::vector<std::string> variants;  // sorted
  std::map<std::string, double> strengths;  // geometric mean 1
  std::vector<std::vector<double>> preference;  // preference[i][j] = P(variants[i] beats variants[j])
  int iterations = 0;
  bool converged = false;

  double probability(const std::string& a, const std::string& b) const;
  // Log strengths, the other common readout of a BT fit.
  std::map<std::string, double> log_strengths() const;
};

// Maximum-likelihood BT strengths from decisive judgments ("same" dropped)
// via minorization-maximization updates. Throws InvalidArgument when no
// decisive judgment exists or the comparison graph is disconnected (the
// message lists the components), and UndefinedResult when the likelihood has
// no finite maximum and pseudo_count is zero.
BtResult bt_fit(std::span<const PairwiseJudgment> judgments, const BtOptions& options = {});
BtResult bt_fit(std::span<const PairwiseJudgment> judgments, Dimension dimension,
                const BtOptions& options = {});

struct WinRateRow {
  Dimension dimension = Dimension::kOverall;
  std::string genre;  // empty for the all-genre row
  std::string variant_a;
  std::string variant_b;
  int a_wins = 0;
  int b_wins = 0;
  int same = 0;
  // 100 * a_wins / (a_wins + b_wins + same).
  double win_rate = 0.0;
};

// One row per (dimension, unordered variant pair). A pair's orientation is the
// one it first appears with; reversed judgments are flipped to match.
std::vector<WinRateRow> win_rates(std::span<const PairwiseJudgment> judgments);
// Same, split by genre of the judged example (looked up by example_id). An
// example with several tags counts once per tag; unknown examples are skipped.
std::vector<WinRateRow> win_rates_by_genre(std::span<const PairwiseJudgment> judgments,
                                           const std::map<std::string, std::set<Genre>>& genres);

// Fleiss' kappa over an N x C table of category counts; every row must sum to
// the same rater count k >= 2. Throws UndefinedResult when expected agreement
// is 1.
double fleiss_kappa(const std::vector<std::vector<int>>& table);

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, t approximation with n - 2 dof
  std::size_t n = 0;
};

// 1-based ranks, ties receive the average of their positions.
std::vector<double> average_ranks(std::span<const double> values);
// Throws InvalidArgument for mismatched or short (< 3) inputs and
// UndefinedResult when either side is constant.
SpearmanResult spearman(std::span<const double> x, std::span<const double> y);

}  // namespace vrcli
