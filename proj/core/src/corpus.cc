#include "vrcli/corpus.h"

#include <algorithm>
#include <array>
#include <numeric>

#include "vrcli/errors.h"
#include "vrcli/rng.h"
#include "vrcli/text.h"

namespace vrcli {

std::string_view to_string(Genre g) {
  switch (g) {
    case Genre::kSciFi: return "sci-fi";
    case Genre::kFantasy: return "fantasy";
    case Genre::kRomance: return "romance";
    case Genre::kHistorical: return "historical";
    case Genre::kOther: return "other";
  }
  return "other";
}

std::string_view to_string(Audience a) {
  switch (a) {
    case Audience::kYoungAdult: return "young-adult";
    case Audience::kAdult: return "adult";
    case Audience::kUnknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Genre parse_genre(std::string_view name) {
  const std::string n = to_lower_ascii(name);
  if (n == "sci-fi" || n == "scifi" || n == "science-fiction") return Genre::kSciFi;
  if (n == "fantasy") return Genre::kFantasy;
  if (n == "romance") return Genre::kRomance;
  if (n == "historical" || n == "historical-fiction") return Genre::kHistorical;
  return Genre::kOther;
}

Audience parse_audience(std::string_view name) {
  const std::string n = to_lower_ascii(name);
  if (n == "young-adult" || n == "ya") return Audience::kYoungAdult;
  if (n == "adult") return Audience::kAdult;
  return Audience::kUnknown;
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

TokenCounter whitespace_token_counter() {
  return [](std::string_view text) { return word_count(text); };
}

ChapterRecord ChapterRecord::make(int index, std::string text, const TokenCounter& count_tokens) {
  ChapterRecord c;
  c.index = index;
  c.word_count = vrcli::word_count(text);
  c.token_count = count_tokens(text);
  c.text = std::move(text);
  return c;
}

void BookRecord::validate() const {
  if (chapters.size() != chapter_summaries.size())
    throw InvalidArgument("book " + book_id + ": " + std::to_string(chapters.size()) +
                          " chapters but " + std::to_string(chapter_summaries.size()) +
                          " summaries");
  for (std::size_t i = 0; i < chapters.size(); ++i) {
    if (chapters[i].index != static_cast<int>(i))
      throw InvalidArgument("book " + book_id + ": chapter indices not contiguous at " +
                            std::to_string(i));
  }
}

void StoryInformation::validate() const {
  const std::string where = book_id + ":" + std::to_string(chapter_index);
  auto require = [&](const std::string& field, std::string_view name) {
    if (trim(field).empty())
      throw InvalidArgument("story information " + where + ": empty " + std::string(name));
  };
  require(book_id, "book_id");
  require(global_sketch, "global_sketch");
  require(prior_summary, "prior_summary");
  require(previous_chapter, "previous_chapter");
  require(next_chapter_synopsis, "next_chapter_synopsis");
  if (character_sheets.empty() || character_sheets.size() > 3)
    throw InvalidArgument("story information " + where + ": expected 1..3 character sheets");
  for (const auto& sheet : character_sheets) {
    require(sheet.name, "character name");
    require(sheet.text, "character sheet");
  }
}

std::string NcpExample::id() const {
  return story_information.book_id + ":" + std::to_string(story_information.chapter_index);
}

void NcpExample::validate() const {
  story_information.validate();
  if (gold_next_chapter.index != story_information.chapter_index + 1)
    throw InvalidArgument("example " + id() + ": gold chapter index " +
                          std::to_string(gold_next_chapter.index) + " is not chapter_index + 1");
}

const std::vector<NcpExample>& DatasetSplits::get(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return train;
}

std::vector<int> filter_chapters(const BookRecord& book, const FilterRules& rules) {
  book.validate();
  std::vector<int> eligible;
  const int n = static_cast<int>(book.chapters.size());
  for (int i = 0; i + 1 < n; ++i) {
    const int k = i + 1;  // 1-based number of the current chapter
    if (!(k > rules.leading_excluded && k < n - rules.trailing_excluded)) continue;
    const std::size_t next_words = book.chapters[i + 1].word_count;
    if (next_words < rules.min_next_words || next_words > rules.max_words) continue;
    if (book.chapters[i].word_count > rules.max_words) continue;
    eligible.push_back(i);
  }
  return eligible;
}

std::string_view to_string(SplitPredicate p) {
  switch (p) {
    case SplitPredicate::kSciFiNotFantasy: return "sci-fi (not fantasy)";
    case SplitPredicate::kFantasyNotSciFi: return "fantasy (not sci-fi)";
    case SplitPredicate::kNeitherSciFiNorFantasy: return "neither sci-fi nor fantasy";
    case SplitPredicate::kHistorical: return "historical";
    case SplitPredicate::kRomance: return "romance";
    case SplitPredicate::kYoungAdult: return "young-adult";
    case SplitPredicate::kAdult: return "adult";
  }
  return "?";
}

bool satisfies(const BookRecord& book, SplitPredicate p) {
  const bool scifi = book.genre_tags.contains(Genre::kSciFi);
  const bool fantasy = book.genre_tags.contains(Genre::kFantasy);
  switch (p) {
    case SplitPredicate::kSciFiNotFantasy: return scifi && !fantasy;
    case SplitPredicate::kFantasyNotSciFi: return fantasy && !scifi;
    // A book with no genre tags satisfies no genre predicate.
    case SplitPredicate::kNeitherSciFiNorFantasy:
      return !scifi && !fantasy && !book.genre_tags.empty();
    case SplitPredicate::kHistorical: return book.genre_tags.contains(Genre::kHistorical);
    case SplitPredicate::kRomance: return book.genre_tags.contains(Genre::kRomance);
    case SplitPredicate::kYoungAdult: return book.audience == Audience::kYoungAdult;
    case SplitPredicate::kAdult: return book.audience == Audience::kAdult;
  }
  return false;
}

namespace {

constexpr std::size_t kNumPredicates = std::size(kAllSplitPredicates);
constexpr std::array<Split, 3> kSplits = {Split::kTrain, Split::kVal, Split::kTest};

using PredicateMask = unsigned;
constexpr PredicateMask kFullMask = (1u << kNumPredicates) - 1;

PredicateMask mask_of(const BookRecord& book) {
  PredicateMask m = 0;
  for (std::size_t p = 0; p < kNumPredicates; ++p)
    if (satisfies(book, kAllSplitPredicates[p])) m |= 1u << p;
  return m;
}

std::array<int, 3> capacities(const SplitCounts& c) { return {c.train, c.val, c.test}; }

// Books with the same predicate mask are interchangeable, so the exact search
// distributes group counts across splits instead of individual books.
class GroupSearch {
 public:
  GroupSearch(std::vector<std::pair<PredicateMask, int>> groups, std::array<int, 3> capacity)
      : groups_(std::move(groups)), remaining_(capacity), required_(capacity),
        take_(groups_.size()) {}

  bool run() { return visit(0); }
  // take()[g][s] = number of books of group g placed in split s.
  const std::vector<std::array<int, 3>>& take() const { return take_; }

 private:
  bool visit(std::size_t g) {
    PredicateMask still_available = 0;
    for (std::size_t k = g; k < groups_.size(); ++k) still_available |= groups_[k].first;
    for (std::size_t s = 0; s < 3; ++s) {
      if (required_[s] > 0 && (covered_[s] | still_available) != kFullMask) return false;
    }
    if (g == groups_.size()) return remaining_ == std::array<int, 3>{0, 0, 0};

    const auto [mask, count] = groups_[g];
    for (int a = std::min(count, remaining_[0]); a >= 0; --a) {
      for (int b = std::min(count - a, remaining_[1]); b >= 0; --b) {
        const int c = count - a - b;
        if (c > remaining_[2]) continue;
        const std::array<int, 3> n = {a, b, c};
        const auto saved = covered_;
        for (std::size_t s = 0; s < 3; ++s) {
          remaining_[s] -= n[s];
          if (n[s] > 0) covered_[s] |= mask;
        }
        take_[g] = n;
        if (visit(g + 1)) return true;
        for (std::size_t s = 0; s < 3; ++s) remaining_[s] += n[s];
        covered_ = saved;
      }
    }
    return false;
  }

  std::vector<std::pair<PredicateMask, int>> groups_;
  std::array<int, 3> remaining_;
  std::array<int, 3> required_;
  std::array<PredicateMask, 3> covered_{};
  std::vector<std::array<int, 3>> take_;
};

}  // namespace

bool assignment_satisfies(std::span<const BookRecord> books,
                          const std::map<std::string, Split>& assignment,
                          const SplitCounts& counts) {
  const auto cap = capacities(counts);
  std::array<int, 3> used{};
  std::array<PredicateMask, 3> covered{};
  for (const auto& book : books) {
    const auto it = assignment.find(book.book_id);
    if (it == assignment.end()) return false;
    const auto s = static_cast<std::size_t>(it->second);
    ++used[s];
    covered[s] |= mask_of(book);
  }
  for (std::size_t s = 0; s < 3; ++s) {
    if (used[s] != cap[s]) return false;
    if (cap[s] > 0 && covered[s] != kFullMask) return false;
  }
  return true;
}

std::map<std::string, Split> assign_books(std::span<const BookRecord> books,
                                          const SplitOptions& options) {
  const auto cap = capacities(options.counts);
  if (cap[0] < 0 || cap[1] < 0 || cap[2] < 0 ||
      options.counts.total() != static_cast<int>(books.size()))
    throw InvalidArgument("split counts " + std::to_string(cap[0]) + "/" +
                          std::to_string(cap[1]) + "/" + std::to_string(cap[2]) +
                          " do not sum to " + std::to_string(books.size()) + " books");
  {
    std::set<std::string> ids;
    for (const auto& b : books)
      if (!ids.insert(b.book_id).second) throw InvalidArgument("duplicate book id " + b.book_id);
  }

  // Sorted by id so the result does not depend on input order.
  std::vector<std::size_t> order(books.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return books[a].book_id < books[b].book_id; });

  auto assign_in_order = [&](const std::vector<std::size_t>& perm) {
    std::map<std::string, Split> out;
    std::size_t r = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (int k = 0; k < cap[s]; ++k) out[books[perm[r++]].book_id] = kSplits[s];
    return out;
  };

  Rng rng(options.seed);
  if (!options.enforce_constraints) {
    std::vector<std::size_t> perm = order;
    rng.shuffle(std::span(perm));
    return assign_in_order(perm);
  }

  const int needed =
      static_cast<int>(std::count_if(cap.begin(), cap.end(), [](int c) { return c > 0; }));
  std::optional<SplitPredicate> tightest;
  long tightest_slack = 0;
  for (SplitPredicate p : kAllSplitPredicates) {
    const long have = std::count_if(books.begin(), books.end(),
                                    [&](const BookRecord& b) { return satisfies(b, p); });
    if (have < needed)
      throw InfeasibleSplitError("split infeasible: predicate '" + std::string(to_string(p)) +
                                     "' holds for " + std::to_string(have) + " books but " +
                                     std::to_string(needed) + " splits need one",
                                 p);
    if (!tightest || have - needed < tightest_slack) {
      tightest = p;
      tightest_slack = have - needed;
    }
  }

  std::vector<std::size_t> perm = order;
  for (int attempt = 0; attempt < options.retry_cap; ++attempt) {
    perm = order;
    rng.shuffle(std::span(perm));
    auto candidate = assign_in_order(perm);
    if (assignment_satisfies(books, candidate, options.counts)) return candidate;
  }

  // Exhaustive fallback over mask groups; members are placed in shuffled order.
  std::map<PredicateMask, std::vector<std::size_t>> members;
  for (std::size_t idx : perm) members[mask_of(books[idx])].push_back(idx);
  std::vector<std::pair<PredicateMask, int>> groups;
  for (const auto& [mask, idxs] : members) groups.emplace_back(mask, static_cast<int>(idxs.size()));
  GroupSearch search(groups, cap);
  if (!search.run())
    throw InfeasibleSplitError(
        "split infeasible: no assignment satisfies all predicates jointly (tightest: '" +
            std::string(to_string(*tightest)) + "')",
        tightest);

  std::map<std::string, Split> out;
  std::size_t g = 0;
  for (const auto& [mask, idxs] : members) {
    std::size_t r = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (int k = 0; k < search.take()[g][s]; ++k) out[books[idxs[r++]].book_id] = kSplits[s];
    ++g;
  }
  return out;
}

DatasetSplits split_by_book(std::span<const BookRecord> books,
                            std::span<const NcpExample> examples,
                            const SplitOptions& options) {
  DatasetSplits out;
  out.book_assignment = assign_books(books, options);
  for (const auto& ex : examples) {
    const auto it = out.book_assignment.find(ex.story_information.book_id);
    if (it == out.book_assignment.end())
      throw InvalidArgument("example " + ex.id() + " references unknown book");
    NcpExample copy = ex;
    copy.split = it->second;
    switch (it->second) {
      case Split::kTrain: out.train.push_back(std::move(copy)); break;
      case Split::kVal: out.val.push_back(std::move(copy)); break;
      case Split::kTest: out.test.push_back(std::move(copy)); break;
    }
  }
  return out;
}

}  // namespace vrcli
