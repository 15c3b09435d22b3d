#pragma once

#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "vrcli/corpus.h"
#include "vrcli/rng.h"

namespace vrcli::fixture {

inline std::string words(std::size_t n, const std::string& w = "word") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += w;
  }
  return out;
}

inline BookRecord book_with_lengths(const std::string& id, const std::vector<std::size_t>& lengths,
                                    std::set<Genre> genres = {Genre::kOther}, Audience audience = Audience::kAdult) {
  BookRecord b;
  b.book_id = id;
  b.title = "Book " + id;
  b.genre_tags = std::move(genres);
  b.audience = audience;
  b.main_characters = {"Ana", "Bo"};
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    b.chapters.push_back(ChapterRecord::make(static_cast<int>(i), words(lengths[i]), whitespace_token_counter()));
    b.chapter_summaries.push_back("summary of chapter " + std::to_string(i));
  }
  return b;
}

inline StoryInformation story(const std::string& book = "b1", int index = 3) {
  StoryInformation si;
  si.book_id = book;
  si.chapter_index = index;
  si.global_sketch = "A lighthouse keeper hides a map from the harbor guild.";
  si.prior_summary = "Mara found the map. The guild began asking questions.";
  si.character_sheets = {{"Mara", "Keeper of the light, stubborn and careful."},
                         {"Teo", "Guild clerk who owes Mara a favor."}};
  si.previous_chapter = "The storm came in early and the lamp failed twice.";
  si.next_chapter_synopsis = "Teo warns Mara that the guild will search the tower.";
  return si;
}

inline NcpExample example(const std::string& book, int index, const std::string& gold, Split split = Split::kTrain) {
  NcpExample ex;
  ex.story_information = story(book, index);
  ex.gold_next_chapter = ChapterRecord::make(index + 1, gold, whitespace_token_counter());
  ex.split = split;
  ex.genre_tags = {Genre::kSciFi};
  return ex;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("vrcli-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace vrcli::fixture
