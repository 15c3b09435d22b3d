#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.h"
#include "fixtures.h"
#include "vrcli/corpus.h"
#include "vrcli/dataset.h"
#include "vrcli/synthetic.h"

using namespace vrcli;

TEST(Filter, EmptyBookHasNoEligibleIndices) {
  BookRecord b;
  b.book_id = "empty";
  EXPECT_TRUE(filter_chapters(b).empty());
}

TEST(Filter, ShortNextChapterExcluded) {
  // Index 3 predicts chapter 5 (1-based), which has only 150 words.
  auto b = fixture::book_with_lengths("b", {300, 300, 300, 300, 150, 300, 300, 300, 300, 300});
  const auto got = filter_chapters(b);
  EXPECT_EQ(std::count(got.begin(), got.end(), 3), 0);
  EXPECT_EQ(std::count(got.begin(), got.end(), 2), 1);
}

TEST(Filter, ExactlyMinimumNextChapterIncluded) {
  auto b = fixture::book_with_lengths("b", {300, 300, 300, 4999, 200, 300, 300, 300, 300, 300});
  const auto got = filter_chapters(b);
  EXPECT_EQ(std::count(got.begin(), got.end(), 3), 1);
}

TEST(Filter, OverlongCurrentChapterExcluded) {
  auto b = fixture::book_with_lengths("b", {300, 300, 300, 5001, 300, 300, 300, 300, 300, 300});
  const auto got = filter_chapters(b);
  EXPECT_EQ(std::count(got.begin(), got.end(), 3), 0);
}

TEST(Filter, TenEqualChaptersMatchesRuleOracle) {
  auto b = fixture::book_with_lengths("b", std::vector<std::size_t>(10, 300));
  EXPECT_EQ(filter_chapters(b), oracle::eligible_indices(b));
  // Chapters 1, 2, 9 and 10 are never predicted.
  EXPECT_EQ(filter_chapters(b), (std::vector<int>{2, 3, 4, 5, 6}));
}

TEST(Filter, RandomBooksMatchRuleOracle) {
  Rng rng(2024);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(14);
    std::vector<std::size_t> lengths;
    for (std::size_t i = 0; i < n; ++i) {
      const auto pick = rng.below(6);
      lengths.push_back(pick == 0 ? 199 : pick == 1 ? 200 : pick == 2 ? 5000 : pick == 3 ? 5001 : 100 + rng.below(600));
    }
    auto b = fixture::book_with_lengths("r" + std::to_string(t), lengths);
    EXPECT_EQ(filter_chapters(b), oracle::eligible_indices(b)) << "book " << t;
  }
}

namespace {

std::vector<BookRecord> tagged_books(const std::vector<std::pair<std::set<Genre>, Audience>>& tags) {
  std::vector<BookRecord> out;
  for (std::size_t i = 0; i < tags.size(); ++i)
    out.push_back(fixture::book_with_lengths("k" + std::to_string(i), {300, 300, 300, 300, 300, 300},
                                             tags[i].first, tags[i].second));
  return out;
}

}  // namespace

TEST(Split, TwentyTwoFourFourMixMeetsEveryPredicate) {
  const auto books = make_synthetic_corpus({});
  ASSERT_EQ(books.size(), 30u);
  SplitOptions opts;
  opts.seed = 7;
  const auto a = assign_books(books, opts);
  ASSERT_EQ(a.size(), 30u);
  int counts[3] = {0, 0, 0};
  for (const auto& [id, s] : a) ++counts[static_cast<int>(s)];
  EXPECT_EQ(counts[0], 22);
  EXPECT_EQ(counts[1], 4);
  EXPECT_EQ(counts[2], 4);
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
    for (auto p : kAllSplitPredicates) {
      bool any = false;
      for (const auto& b : books)
        if (a.at(b.book_id) == s && satisfies(b, p)) any = true;
      EXPECT_TRUE(any) << to_string(s) << " lacks " << to_string(p);
    }
}

TEST(Split, SingleBookUnconstrainedGoesToTrain) {
  const auto books = tagged_books({{{Genre::kOther}, Audience::kAdult}});
  SplitOptions opts;
  opts.counts = {1, 0, 0};
  opts.enforce_constraints = false;
  const auto a = assign_books(books, opts);
  EXPECT_EQ(a.at("k0"), Split::kTrain);
}

TEST(Split, EightBooksAgreeWithExhaustiveFeasibility) {
  const std::vector<std::set<Genre>> pool = {{Genre::kSciFi},   {Genre::kFantasy}, {Genre::kOther},
                                             {Genre::kHistorical, Genre::kRomance}, {Genre::kRomance},
                                             {Genre::kHistorical}, {Genre::kSciFi, Genre::kFantasy}};
  Rng rng(99);
  int feasible = 0, infeasible = 0;
  for (int t = 0; t < 40; ++t) {
    std::vector<std::pair<std::set<Genre>, Audience>> tags;
    for (int i = 0; i < 8; ++i)
      tags.push_back({pool[rng.below(pool.size())], rng.below(2) ? Audience::kAdult : Audience::kYoungAdult});
    const auto books = tagged_books(tags);
    SplitOptions opts;
    opts.counts = {4, 2, 2};
    opts.seed = static_cast<std::uint64_t>(t);
    opts.retry_cap = 50;
    const bool expect = oracle::split_feasible(books, opts.counts);
    if (expect) {
      ++feasible;
      const auto a = assign_books(books, opts);
      EXPECT_TRUE(assignment_satisfies(books, a, opts.counts)) << "instance " << t;
    } else {
      ++infeasible;
      EXPECT_THROW(assign_books(books, opts), InfeasibleSplitError) << "instance " << t;
    }
  }
  // The instance mix should exercise both outcomes.
  EXPECT_GT(infeasible, 0);
}

TEST(Split, FeasibleOnlyThroughExhaustiveSearch) {
  // Exactly one arrangement works: each split needs its own copy of the
  // all-purpose books, so rejection sampling with a tiny cap usually misses.
  std::vector<std::pair<std::set<Genre>, Audience>> tags;
  for (int i = 0; i < 3; ++i) {
    tags.push_back({{Genre::kSciFi, Genre::kHistorical}, Audience::kAdult});
    tags.push_back({{Genre::kFantasy, Genre::kRomance}, Audience::kYoungAdult});
    tags.push_back({{Genre::kOther}, Audience::kAdult});
  }
  const auto books = tagged_books(tags);
  SplitOptions opts;
  opts.counts = {3, 3, 3};
  opts.retry_cap = 1;
  ASSERT_TRUE(oracle::split_feasible(books, opts.counts));
  EXPECT_TRUE(assignment_satisfies(books, assign_books(books, opts), opts.counts));
}

TEST(Split, InfeasibleNamesPredicate) {
  const auto books = tagged_books({{{Genre::kSciFi}, Audience::kAdult},
                                   {{Genre::kFantasy}, Audience::kAdult},
                                   {{Genre::kOther}, Audience::kAdult}});
  SplitOptions opts;
  opts.counts = {3, 0, 0};
  try {
    assign_books(books, opts);
    FAIL() << "expected InfeasibleSplitError";
  } catch (const InfeasibleSplitError& e) {
    ASSERT_TRUE(e.predicate().has_value());
    EXPECT_NE(std::string(e.what()).find(std::string(to_string(*e.predicate()))), std::string::npos);
  }
}

TEST(Split, SeededSplitIsByteDeterministic) {
  const auto books = make_synthetic_corpus({});
  std::vector<NcpExample> examples;
  for (const auto& b : books)
    for (int i : filter_chapters(b)) examples.push_back(fixture::example(b.book_id, i, "gold words here"));
  SplitOptions opts;
  opts.seed = 7;
  auto render = [&](const SplitOptions& o) {
    const auto s = split_by_book(books, examples, o);
    ArtifactHeader h;
    h.kind = "examples";
    return write_examples(h, s.train) + write_examples(h, s.val) + write_examples(h, s.test);
  };
  EXPECT_EQ(render(opts), render(opts));
  auto other = opts;
  other.seed = 8;
  EXPECT_NE(render(opts), render(other));
}

TEST(Split, ExamplesFollowTheirBook) {
  const auto books = make_synthetic_corpus({});
  std::vector<NcpExample> examples;
  for (const auto& b : books)
    for (int i : filter_chapters(b)) examples.push_back(fixture::example(b.book_id, i, "gold"));
  SplitOptions opts;
  opts.seed = 3;
  const auto s = split_by_book(books, examples, opts);
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), examples.size());
  for (Split which : {Split::kTrain, Split::kVal, Split::kTest})
    for (const auto& ex : s.get(which)) {
      EXPECT_EQ(s.book_assignment.at(ex.story_information.book_id), which);
      EXPECT_EQ(ex.split, which);
    }
}

TEST(Dataset, ExampleJsonRoundTrip) {
  auto ex = fixture::example("b9", 4, "The tower door was already open.", Split::kVal);
  ex.genre_tags = {Genre::kFantasy, Genre::kRomance};
  const auto back = example_from_json(example_to_json(ex));
  EXPECT_EQ(back.id(), ex.id());
  EXPECT_EQ(back.split, Split::kVal);
  EXPECT_EQ(back.genre_tags, ex.genre_tags);
  EXPECT_EQ(back.story_information.character_sheets.size(), 2u);
  EXPECT_EQ(back.gold_next_chapter.text, ex.gold_next_chapter.text);
  EXPECT_EQ(example_to_json(back), example_to_json(ex));
}

TEST(Dataset, CorpusDirectoryRoundTrip) {
  fixture::TempDir dir("corpus");
  SyntheticCorpusOptions o;
  o.books = 4;
  const auto books = make_synthetic_corpus(o);
  write_corpus_directory(dir.path, books);
  const auto back = load_corpus_directory(dir.path, whitespace_token_counter());
  ASSERT_EQ(back.size(), books.size());
  for (std::size_t i = 0; i < books.size(); ++i) {
    EXPECT_EQ(back[i].book_id, books[i].book_id);
    EXPECT_EQ(back[i].genre_tags, books[i].genre_tags);
    EXPECT_EQ(back[i].audience, books[i].audience);
    ASSERT_EQ(back[i].chapters.size(), books[i].chapters.size());
    EXPECT_EQ(back[i].chapters.back().word_count, books[i].chapters.back().word_count);
  }
}

TEST(Dataset, ArtifactHeaderRoundTrip) {
  ArtifactHeader h;
  h.kind = "examples";
  h.stage_version = "split-v1";
  h.config_hash = "abc";
  h.seed = 42;
  const auto back = ArtifactHeader::from_json_line(h.to_json_line());
  EXPECT_EQ(back.kind, "examples");
  EXPECT_EQ(back.config_hash, "abc");
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.stage_version, "split-v1");
}

TEST(Dataset, TokenStatsPopulation) {
  const std::vector<std::size_t> v = {2, 4, 4, 4, 5, 5, 7, 9};
  const auto st = token_stats(v);
  EXPECT_DOUBLE_EQ(st.mean, 5.0);
  EXPECT_DOUBLE_EQ(st.stddev, 2.0);
  EXPECT_EQ(st.min, 2u);
  EXPECT_EQ(st.max, 9u);
}
