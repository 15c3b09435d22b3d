#include "vrcli/synthetic.h"

#include <fstream>

#include <json.hpp>

#include "vrcli/dataset.h"
#include "vrcli/errors.h"
#include "vrcli/prompts.h"
#include "vrcli/rng.h"
#include "vrcli/text.h"

namespace vrcli {

namespace {

const std::vector<std::string>& prose_words() {
  static const std::vector<std::string> words = {
      "the",    "a",      "and",    "of",     "to",     "in",     "was",    "she",   "he",
      "they",   "it",     "that",   "with",   "for",    "on",     "at",     "from",  "into",
      "river",  "ship",   "castle", "forest", "city",   "storm",  "letter", "door",  "road",
      "light",  "shadow", "voice",  "fire",   "water",  "stone",  "night",  "dawn",  "window",
      "walked", "said",   "turned", "waited", "opened", "found",  "lost",   "saw",   "heard",
      "ran",    "held",   "knew",   "feared", "hoped",  "quiet",  "cold",   "bright", "old",
      "young",  "silent", "broken", "hidden", "long",   "small",  "strange", "slowly", "again",
      "before", "after",  "under",  "above",  "beyond", "near",   "far",    "every", "no"};
  return words;
}

const std::vector<std::string>& names() {
  static const std::vector<std::string> n = {"Mara", "Ilya", "Tomas", "Wren", "Odile", "Kasim",
                                             "Juno", "Petra", "Ansel", "Lio", "Nadia", "Ravi"};
  return n;
}

struct Tagging {
  std::set<Genre> genres;
  Audience audience;
};

const Tagging kPattern[10] = {
    {{Genre::kSciFi}, Audience::kYoungAdult},
    {{Genre::kFantasy}, Audience::kAdult},
    {{Genre::kHistorical, Genre::kRomance}, Audience::kAdult},
    {{Genre::kSciFi}, Audience::kAdult},
    {{Genre::kFantasy, Genre::kRomance}, Audience::kYoungAdult},
    {{Genre::kHistorical}, Audience::kAdult},
    {{Genre::kOther}, Audience::kAdult},
    {{Genre::kSciFi, Genre::kFantasy}, Audience::kYoungAdult},
    {{Genre::kRomance}, Audience::kAdult},
    {{Genre::kFantasy}, Audience::kAdult},
};

std::string sentence(Rng& rng, const std::vector<std::string>& cast, int words) {
  std::string s = cast[rng.below(cast.size())];
  const auto& vocab = prose_words();
  for (int k = 1; k < words; ++k) s += " " + vocab[rng.below(vocab.size())];
  return s + ".";
}

std::string prose(Rng& rng, const std::vector<std::string>& cast, int target_words) {
  std::string out;
  int written = 0;
  int in_paragraph = 0;
  while (written < target_words) {
    const int n = std::min(target_words - written, 6 + static_cast<int>(rng.below(10)));
    if (!out.empty()) out += in_paragraph == 0 ? "\n\n" : " ";
    out += sentence(rng, cast, n);
    written += n;
    in_paragraph = (in_paragraph + 1) % 5;
  }
  return out;
}

}  // namespace

std::vector<BookRecord> make_synthetic_corpus(const SyntheticCorpusOptions& options,
                                              const TokenCounter& count_tokens) {
  if (options.books < 1 || options.min_chapters < 1 || options.max_chapters < options.min_chapters ||
      options.min_chapter_words < 1 || options.max_chapter_words < options.min_chapter_words)
    throw InvalidArgument("invalid synthetic corpus options");
  Rng root(options.seed);
  std::vector<BookRecord> books;
  for (int b = 0; b < options.books; ++b) {
    Rng rng = root.derive("book-" + std::to_string(b));
    BookRecord book;
    char id[16];
    std::snprintf(id, sizeof id, "syn%03d", b);
    book.book_id = id;
    book.title = "Synthetic Book " + std::to_string(b + 1);
    book.genre_tags = kPattern[b % 10].genres;
    book.audience = kPattern[b % 10].audience;
    std::vector<std::string> pool = names();
    rng.shuffle(std::span(pool));
    book.main_characters.assign(pool.begin(), pool.begin() + 3);

    const int chapters = options.min_chapters +
                         static_cast<int>(rng.below(static_cast<std::uint64_t>(options.max_chapters - options.min_chapters + 1)));
    for (int c = 0; c < chapters; ++c) {
      const int words = options.min_chapter_words +
                        static_cast<int>(rng.below(static_cast<std::uint64_t>(options.max_chapter_words - options.min_chapter_words + 1)));
      book.chapters.push_back(ChapterRecord::make(c, prose(rng, book.main_characters, words), count_tokens));
      book.chapter_summaries.push_back(sentence(rng, book.main_characters, 12) + " " +
                                       sentence(rng, book.main_characters, 10));
    }
    book.validate();
    books.push_back(std::move(book));
  }
  return books;
}

void write_corpus_directory(const std::filesystem::path& root, const std::vector<BookRecord>& books) {
  using nlohmann::json;
  for (const auto& book : books) {
    const auto dir = root / book.book_id;
    std::filesystem::create_directories(dir / "chapters");
    json genres = json::array();
    for (Genre g : book.genre_tags) genres.push_back(std::string(to_string(g)));
    write_file_atomic(dir / "book.json", json{{"book_id", book.book_id},
                                              {"title", book.title},
                                              {"genres", genres},
                                              {"audience", std::string(to_string(book.audience))},
                                              {"main_characters", book.main_characters}}
                                             .dump(2));
    std::string summaries;
    for (std::size_t i = 0; i < book.chapters.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%03zu.txt", i);
      write_file_atomic(dir / "chapters" / name, book.chapters[i].text + "\n");
      summaries += json{{"index", i}, {"summary", book.chapter_summaries[i]}}.dump() + "\n";
    }
    write_file_atomic(dir / "summaries.jsonl", summaries);
  }
}

HintTask make_hint_task(const HintTaskOptions& options) {
  if (options.candidates < 2 || options.oracle < 0 || options.oracle >= options.candidates)
    throw InvalidArgument("hint task needs >= 2 candidates and a valid oracle index");
  if (options.min_gold_words < 1 || options.max_gold_words < options.min_gold_words)
    throw InvalidArgument("invalid hint task gold lengths");
  HintTask task;
  for (int k = 0; k < options.candidates; ++k) task.candidates.push_back("h" + std::to_string(k));
  task.oracle = task.candidates[static_cast<std::size_t>(options.oracle)];
  task.first_gold_word = "alpha";

  const std::vector<std::string> gold_vocab = {"alpha", "beta", "gamma", "delta", "echo", "fox",
                                               "gale", "harbor", "iris", "jade", "kite", "lumen"};
  Rng rng(options.seed);
  auto make_example = [&](int n, Split split) {
    NcpExample ex;
    auto& si = ex.story_information;
    si.book_id = "hint";
    si.chapter_index = n;
    si.global_sketch = "A story about a lighthouse keeper.";
    si.prior_summary = "The keeper has waited " + std::to_string(n) + " nights for a ship.";
    si.character_sheets = {{"Keeper", "Patient and watchful."}};
    si.previous_chapter = "The lamp burned through the night.";
    si.next_chapter_synopsis = "A ship finally arrives.";
    const int len = options.min_gold_words +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(options.max_gold_words - options.min_gold_words + 1)));
    std::string gold = task.first_gold_word;
    for (int k = 1; k < len; ++k) gold += " " + gold_vocab[rng.below(gold_vocab.size())];
    ex.gold_next_chapter = ChapterRecord::make(n + 1, gold, whitespace_token_counter());
    ex.split = split;
    return ex;
  };
  for (int n = 0; n < options.train_examples; ++n) task.train.push_back(make_example(n, Split::kTrain));
  for (int n = 0; n < options.val_examples; ++n)
    task.val.push_back(make_example(options.train_examples + n, Split::kVal));

  std::vector<std::string> gen_vocab = gold_vocab;
  gen_vocab.insert(gen_vocab.end(), task.candidates.begin(), task.candidates.end());
  auto generator = std::make_shared<TinyLmPolicy>(gen_vocab, 2);
  std::vector<double> row(generator->vocab_size(), 0.0);
  row[static_cast<std::size_t>(generator->symbol_id(task.first_gold_word))] = options.oracle_logit;
  generator->set_logits({generator->symbol_id(task.oracle)}, row);
  generator->freeze();
  task.generator = generator;

  task.initial_policy = TinyLmPolicy(task.candidates, 2);
  return task;
}

}  // namespace vrcli
