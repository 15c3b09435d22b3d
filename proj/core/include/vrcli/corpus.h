#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vrcli {

enum class Genre { kSciFi, kFantasy, kRomance, kHistorical, kOther };
enum class Audience { kUnknown, kYoungAdult, kAdult };
enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Genre g);
std::string_view to_string(Audience a);
std::string_view to_string(Split s);
// Unknown genre names map to kOther.
Genre parse_genre(std::string_view name);
Audience parse_audience(std::string_view name);
Split parse_split(std::string_view name);

// Counts tokens under whatever tokenizer the active backend uses.
using TokenCounter = std::function<std::size_t(std::string_view)>;
TokenCounter whitespace_token_counter();

struct ChapterRecord {
  int index = 0;
  std::string text;
  std::size_t word_count = 0;
  std::size_t token_count = 0;

  static ChapterRecord make(int index, std::string text, const TokenCounter& count_tokens);
};

struct BookRecord {
  std::string book_id;
  std::string title;
  std::set<Genre> genre_tags;
  Audience audience = Audience::kUnknown;
  // Up to three principal characters, most important first.
  std::vector<std::string> main_characters;
  std::vector<ChapterRecord> chapters;
  std::vector<std::string> chapter_summaries;

  // Throws InvalidArgument when chapters and summaries are misaligned or
  // chapter indices are not contiguous from 0.
  void validate() const;
};

struct CharacterSheet {
  std::string name;
  std::string text;
};

struct StoryInformation {
  std::string book_id;
  int chapter_index = 0;
  std::string global_sketch;
  std::string prior_summary;
  std::vector<CharacterSheet> character_sheets;
  std::string previous_chapter;
  std::string next_chapter_synopsis;

  void validate() const;
};

struct NcpExample {
  StoryInformation story_information;
  ChapterRecord gold_next_chapter;
  Split split = Split::kTrain;
  std::set<Genre> genre_tags;

  // "<book_id>:<chapter_index>"
  std::string id() const;
  void validate() const;
};

struct DatasetSplits {
  std::vector<NcpExample> train;
  std::vector<NcpExample> val;
  std::vector<NcpExample> test;
  std::map<std::string, Split> book_assignment;

  const std::vector<NcpExample>& get(Split s) const;
};

// Eligible SI indices (0-based, the index of the *current* chapter c_i).
//
// With 1-based chapter numbering k = i + 1, index i is eligible iff
//   200 <= words(next chapter) <= 5000,
//   words(current chapter) <= 5000,
//   2 < k < |S| - 2,
// so neither of the first two chapters and neither of the last two chapters
// is ever the next chapter.
struct FilterRules {
  std::size_t min_next_words = 200;
  std::size_t max_words = 5000;
  int leading_excluded = 2;
  int trailing_excluded = 2;
};
std::vector<int> filter_chapters(const BookRecord& book, const FilterRules& rules = {});

// Book-level split constraints; every split with a positive count must contain
// at least one book satisfying each predicate.
enum class SplitPredicate {
  kSciFiNotFantasy,
  kFantasyNotSciFi,
  kNeitherSciFiNorFantasy,
  kHistorical,
  kRomance,
  kYoungAdult,
  kAdult,
};
inline constexpr SplitPredicate kAllSplitPredicates[] = {
    SplitPredicate::kSciFiNotFantasy, SplitPredicate::kFantasyNotSciFi,
    SplitPredicate::kNeitherSciFiNorFantasy, SplitPredicate::kHistorical,
    SplitPredicate::kRomance, SplitPredicate::kYoungAdult, SplitPredicate::kAdult};

std::string_view to_string(SplitPredicate p);
bool satisfies(const BookRecord& book, SplitPredicate p);

struct SplitCounts {
  int train = 22;
  int val = 4;
  int test = 4;
  int total() const { return train + val + test; }
};

struct SplitOptions {
  SplitCounts counts;
  bool enforce_constraints = true;
  std::uint64_t seed = 0;
  int retry_cap = 10000;
};

class InfeasibleSplitError : public std::runtime_error {
 public:
  InfeasibleSplitError(const std::string& what, std::optional<SplitPredicate> predicate)
      : std::runtime_error(what), predicate_(predicate) {}
  std::optional<SplitPredicate> predicate() const { return predicate_; }

 private:
  std::optional<SplitPredicate> predicate_;
};

// Assigns each book to a split. Seeded rejection sampling over shuffles, then
// a deterministic exhaustive search when the retry cap is exhausted.
std::map<std::string, Split> assign_books(std::span<const BookRecord> books,
                                          const SplitOptions& options);

bool assignment_satisfies(std::span<const BookRecord> books,
                          const std::map<std::string, Split>& assignment,
                          const SplitCounts& counts);

// Partitions examples by their book's assignment. Example order within each
// split follows the input order.
DatasetSplits split_by_book(std::span<const BookRecord> books,
                            std::span<const NcpExample> examples,
                            const SplitOptions& options);

}  // namespace vrcli
