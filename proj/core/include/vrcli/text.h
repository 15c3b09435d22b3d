#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace vrcli {

// Splits on Unicode whitespace (ASCII space/tab/newline plus the Zs, line and
// paragraph separators encoded as UTF-8). Views point into `text`.
std::vector<std::string_view> split_words(std::string_view text);

// Same split, but also reports the byte offset of each word in `text`.
struct WordSpan {
  std::string_view word;
  std::size_t offset;
};
std::vector<WordSpan> split_word_spans(std::string_view text);

std::size_t word_count(std::string_view text);

// Words for lexical metrics: ASCII case-folded, leading/trailing punctuation
// stripped, empty tokens dropped.
std::vector<std::string> metric_words(std::string_view text);

std::string to_lower_ascii(std::string_view text);
std::string_view trim(std::string_view text);
std::vector<std::string_view> split_lines(std::string_view text);

// Stable 64-bit FNV-1a; used for artifact content hashes and cache keys.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace vrcli
