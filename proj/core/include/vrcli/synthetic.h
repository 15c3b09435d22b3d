#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vrcli/corpus.h"
#include "vrcli/tiny_lm.h"

namespace vrcli {

struct SyntheticCorpusOptions {
  int books = 30;
  int min_chapters = 8;
  int max_chapters = 12;
  int min_chapter_words = 150;  // some chapters fall below the 200-word filter
  int max_chapter_words = 700;
  std::uint64_t seed = 1;
};

// Books with random prose over a small vocabulary. Genre and audience tags
// cycle through a fixed ten-book pattern that lets every split of a 22-4-4
// partition meet the genre conditions.
std::vector<BookRecord> make_synthetic_corpus(const SyntheticCorpusOptions& options,
                                              const TokenCounter& count_tokens = whitespace_token_counter());

// Writes the directory layout read by load_corpus_directory.
void write_corpus_directory(const std::filesystem::path& root, const std::vector<BookRecord>& books);

// A task where exactly one of K single-token plans helps the generator:
// the generator assigns high probability to the first gold word only right
// after the oracle plan token, and is uniform everywhere else. Every other
// plan therefore scores exactly the baseline perplexity.
struct HintTaskOptions {
  int candidates = 8;
  int oracle = 3;
  int train_examples = 16;
  int val_examples = 4;
  int min_gold_words = 10;
  int max_gold_words = 30;
  double oracle_logit = 6.0;
  std::uint64_t seed = 11;
};

struct HintTask {
  std::vector<std::string> candidates;  // plan tokens h0..h{K-1}
  std::string oracle;
  std::string first_gold_word;
  std::vector<NcpExample> train;
  std::vector<NcpExample> val;
  std::shared_ptr<const TinyLmPolicy> generator;
  TinyLmPolicy initial_policy{std::vector<std::string>{}, 2};  // uniform over the candidates plus "<unk>"
};

HintTask make_hint_task(const HintTaskOptions& options = {});

}  // namespace vrcli
