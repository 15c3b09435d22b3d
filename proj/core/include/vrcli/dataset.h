#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vrcli/corpus.h"

namespace vrcli {

inline constexpr int kDatasetSchemaVersion = 1;

// First line of every artifact file written by the pipeline.
struct ArtifactHeader {
  std::string kind;
  int schema_version = kDatasetSchemaVersion;
  std::string stage_version;
  std::string config_hash;
  std::uint64_t seed = 0;
  // Remote-backend outputs are not reproducible and say so.
  bool deterministic = true;

  std::string to_json_line() const;
  static ArtifactHeader from_json_line(std::string_view line);
};

std::string example_to_json(const NcpExample& ex);
NcpExample example_from_json(std::string_view line);
std::string book_to_json(const BookRecord& book);
BookRecord book_from_json(std::string_view line);

// Header line, then one record per line.
std::string write_examples(const ArtifactHeader& header, std::span<const NcpExample> examples);
std::pair<ArtifactHeader, std::vector<NcpExample>> read_examples(std::string_view data);
std::string write_books(const ArtifactHeader& header, std::span<const BookRecord> books);
std::pair<ArtifactHeader, std::vector<BookRecord>> read_books(std::string_view data);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

// Reads one book directory:
//   book.json       {"book_id", "title", "genres": [...], "audience", "main_characters": [...]}
//   chapters/*.txt  one chapter per file, ordered by file name
//     or book.txt   chapters separated by lines starting with chapter_marker
//   summaries.jsonl one {"index": i, "summary": "..."} record per chapter
BookRecord load_book_directory(const std::filesystem::path& dir, const TokenCounter& count_tokens,
                               std::string_view chapter_marker = "### Chapter");
// Every subdirectory containing book.json, sorted by path.
std::vector<BookRecord> load_corpus_directory(const std::filesystem::path& root,
                                              const TokenCounter& count_tokens);

struct TokenStats {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t min = 0;
  std::size_t max = 0;
};
TokenStats token_stats(std::span<const std::size_t> values);

struct DatasetStats {
  std::string tokenizer;
  std::size_t examples = 0;
  std::map<std::string, std::size_t> examples_per_split;
  // Keyed by SI element name plus "next_chapter".
  std::map<std::string, TokenStats> element_tokens;
  // Mean of synopsis tokens / next-chapter tokens, in percent.
  double synopsis_ratio_pct = 0.0;

  std::string to_json() const;
};
DatasetStats dataset_stats(std::span<const NcpExample> examples, const TokenCounter& count_tokens,
                           std::string tokenizer);

}  // namespace vrcli
