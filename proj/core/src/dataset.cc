#include "vrcli/dataset.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vrcli/errors.h"
#include "vrcli/text.h"

namespace vrcli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string ArtifactHeader::to_json_line() const {
  return json{{"kind", kind},
              {"schema_version", schema_version},
              {"stage_version", stage_version},
              {"config_hash", config_hash},
              {"seed", seed},
              {"deterministic", deterministic}}
      .dump();
}

ArtifactHeader ArtifactHeader::from_json_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    ArtifactHeader h;
    h.kind = j.at("kind");
    h.schema_version = j.at("schema_version");
    h.stage_version = j.value("stage_version", "");
    h.config_hash = j.value("config_hash", "");
    h.seed = j.value("seed", std::uint64_t{0});
    h.deterministic = j.value("deterministic", true);
    if (h.schema_version != kDatasetSchemaVersion)
      throw InvalidArgument("unsupported schema_version " + std::to_string(h.schema_version));
    return h;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed artifact header: ") + e.what());
  }
}

namespace {

json genres_json(const std::set<Genre>& tags) {
  json arr = json::array();
  for (Genre g : tags) arr.push_back(std::string(to_string(g)));
  return arr;
}

std::set<Genre> genres_from(const json& arr) {
  std::set<Genre> out;
  for (const auto& g : arr) out.insert(parse_genre(g.get<std::string>()));
  return out;
}

json chapter_json(const ChapterRecord& c) {
  return {{"index", c.index}, {"text", c.text}, {"word_count", c.word_count}, {"token_count", c.token_count}};
}

ChapterRecord chapter_from(const json& j) {
  ChapterRecord c;
  c.index = j.at("index");
  c.text = j.at("text");
  c.word_count = j.at("word_count");
  c.token_count = j.at("token_count");
  if (c.word_count != word_count(c.text))
    throw InvalidArgument("chapter " + std::to_string(c.index) + ": stored word_count disagrees with text");
  return c;
}

template <typename Fn>
auto parse_record(std::string_view line, Fn&& fn) {
  try {
    return fn(json::parse(line));
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed record: ") + e.what());
  }
}

}  // namespace

std::string example_to_json(const NcpExample& ex) {
  const auto& si = ex.story_information;
  json sheets = json::array();
  for (const auto& cs : si.character_sheets) sheets.push_back({{"name", cs.name}, {"text", cs.text}});
  return json{{"schema_version", kDatasetSchemaVersion},
              {"id", ex.id()},
              {"split", std::string(to_string(ex.split))},
              {"genres", genres_json(ex.genre_tags)},
              {"story_information",
               {{"book_id", si.book_id},
                {"chapter_index", si.chapter_index},
                {"global_sketch", si.global_sketch},
                {"prior_summary", si.prior_summary},
                {"character_sheets", sheets},
                {"previous_chapter", si.previous_chapter},
                {"next_chapter_synopsis", si.next_chapter_synopsis}}},
              {"gold_next_chapter", chapter_json(ex.gold_next_chapter)}}
      .dump();
}

NcpExample example_from_json(std::string_view line) {
  return parse_record(line, [](const json& j) {
    if (j.value("schema_version", 0) != kDatasetSchemaVersion)
      throw InvalidArgument("example record has unsupported schema_version");
    NcpExample ex;
    ex.split = parse_split(j.at("split").get<std::string>());
    ex.genre_tags = genres_from(j.at("genres"));
    const json& s = j.at("story_information");
    auto& si = ex.story_information;
    si.book_id = s.at("book_id");
    si.chapter_index = s.at("chapter_index");
    si.global_sketch = s.at("global_sketch");
    si.prior_summary = s.at("prior_summary");
    for (const auto& cs : s.at("character_sheets")) si.character_sheets.push_back({cs.at("name"), cs.at("text")});
    si.previous_chapter = s.at("previous_chapter");
    si.next_chapter_synopsis = s.at("next_chapter_synopsis");
    ex.gold_next_chapter = chapter_from(j.at("gold_next_chapter"));
    ex.validate();
    return ex;
  });
}

std::string book_to_json(const BookRecord& book) {
  json chapters = json::array();
  for (const auto& c : book.chapters) chapters.push_back(chapter_json(c));
  return json{{"schema_version", kDatasetSchemaVersion},
              {"book_id", book.book_id},
              {"title", book.title},
              {"genres", genres_json(book.genre_tags)},
              {"audience", std::string(to_string(book.audience))},
              {"main_characters", book.main_characters},
              {"chapters", chapters},
              {"chapter_summaries", book.chapter_summaries}}
      .dump();
}

BookRecord book_from_json(std::string_view line) {
  return parse_record(line, [](const json& j) {
    BookRecord b;
    b.book_id = j.at("book_id");
    b.title = j.value("title", "");
    b.genre_tags = genres_from(j.value("genres", json::array()));
    b.audience = parse_audience(j.value("audience", "unknown"));
    b.main_characters = j.value("main_characters", std::vector<std::string>{});
    for (const auto& c : j.at("chapters")) b.chapters.push_back(chapter_from(c));
    b.chapter_summaries = j.at("chapter_summaries").get<std::vector<std::string>>();
    b.validate();
    return b;
  });
}

namespace {

template <typename T, typename Fn>
std::string write_records(const ArtifactHeader& header, std::span<const T> items, Fn&& fn) {
  std::string out = header.to_json_line() + "\n";
  for (const auto& item : items) out += fn(item) + "\n";
  return out;
}

template <typename T, typename Fn>
std::pair<ArtifactHeader, std::vector<T>> read_records(std::string_view data, Fn&& fn) {
  const auto lines = split_lines(data);
  if (lines.empty() || trim(lines[0]).empty()) throw InvalidArgument("artifact file is empty");
  std::pair<ArtifactHeader, std::vector<T>> out{ArtifactHeader::from_json_line(lines[0]), {}};
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      out.second.push_back(fn(lines[i]));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::string write_examples(const ArtifactHeader& header, std::span<const NcpExample> examples) {
  return write_records(header, examples, example_to_json);
}

std::pair<ArtifactHeader, std::vector<NcpExample>> read_examples(std::string_view data) {
  return read_records<NcpExample>(data, example_from_json);
}

std::string write_books(const ArtifactHeader& header, std::span<const BookRecord> books) {
  return write_records(header, books, book_to_json);
}

std::pair<ArtifactHeader, std::vector<BookRecord>> read_books(std::string_view data) {
  return read_records<BookRecord>(data, book_from_json);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw InvalidArgument("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

BookRecord load_book_directory(const fs::path& dir, const TokenCounter& count_tokens,
                               std::string_view chapter_marker) {
  const fs::path meta_path = dir / "book.json";
  BookRecord book;
  try {
    const json meta = json::parse(read_file(meta_path));
    book.book_id = meta.at("book_id");
    book.title = meta.value("title", "");
    book.genre_tags = genres_from(meta.value("genres", json::array()));
    book.audience = parse_audience(meta.value("audience", "unknown"));
    book.main_characters = meta.value("main_characters", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw InvalidArgument(meta_path.string() + ": " + e.what());
  }

  std::vector<std::string> texts;
  if (fs::is_directory(dir / "chapters")) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir / "chapters"))
      if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) texts.push_back(std::string(trim(read_file(f))));
  } else {
    const std::string whole = read_file(dir / "book.txt");
    std::string current;
    bool started = false;
    for (const auto line : split_lines(whole)) {
      if (trim(line).starts_with(chapter_marker)) {
        if (started) texts.push_back(std::string(trim(current)));
        current.clear();
        started = true;
        continue;
      }
      current.append(line);
      current.push_back('\n');
    }
    if (started) texts.push_back(std::string(trim(current)));
  }
  for (std::size_t i = 0; i < texts.size(); ++i)
    book.chapters.push_back(ChapterRecord::make(static_cast<int>(i), std::move(texts[i]), count_tokens));

  book.chapter_summaries.assign(book.chapters.size(), "");
  const std::string summaries = read_file(dir / "summaries.jsonl");
  for (const auto line : split_lines(summaries)) {
    if (trim(line).empty()) continue;
    try {
      const json rec = json::parse(line);
      const int idx = rec.at("index");
      if (idx < 0 || static_cast<std::size_t>(idx) >= book.chapter_summaries.size())
        throw InvalidArgument(book.book_id + ": summary index " + std::to_string(idx) + " has no chapter");
      book.chapter_summaries[static_cast<std::size_t>(idx)] = rec.at("summary");
    } catch (const json::exception& e) {
      throw InvalidArgument((dir / "summaries.jsonl").string() + ": " + e.what());
    }
  }
  book.validate();
  return book;
}

std::vector<BookRecord> load_corpus_directory(const fs::path& root, const TokenCounter& count_tokens) {
  if (!fs::is_directory(root)) throw InvalidArgument("corpus directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "book.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<BookRecord> books;
  for (const auto& d : dirs) books.push_back(load_book_directory(d, count_tokens));
  return books;
}

TokenStats token_stats(std::span<const std::size_t> values) {
  TokenStats s;
  s.count = values.size();
  if (values.empty()) return s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (auto v : values) sum += static_cast<double>(v);
  s.mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (auto v : values) var += (static_cast<double>(v) - s.mean) * (static_cast<double>(v) - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

std::string DatasetStats::to_json() const {
  json elements = json::object();
  for (const auto& [name, s] : element_tokens)
    elements[name] = {{"count", s.count}, {"mean", s.mean}, {"std", s.stddev}, {"min", s.min}, {"max", s.max}};
  return json{{"tokenizer", tokenizer},
              {"examples", examples},
              {"examples_per_split", examples_per_split},
              {"element_tokens", elements},
              {"synopsis_ratio_pct", synopsis_ratio_pct}}
      .dump(2);
}

DatasetStats dataset_stats(std::span<const NcpExample> examples, const TokenCounter& count_tokens,
                           std::string tokenizer) {
  DatasetStats st;
  st.tokenizer = std::move(tokenizer);
  st.examples = examples.size();
  std::map<std::string, std::vector<std::size_t>> per;
  double ratio_sum = 0.0;
  for (const auto& ex : examples) {
    ++st.examples_per_split[std::string(to_string(ex.split))];
    const auto& si = ex.story_information;
    per["global_sketch"].push_back(count_tokens(si.global_sketch));
    per["prior_summary"].push_back(count_tokens(si.prior_summary));
    std::size_t sheets = 0;
    for (const auto& cs : si.character_sheets) sheets += count_tokens(cs.text);
    per["character_sheets"].push_back(sheets);
    per["previous_chapter"].push_back(count_tokens(si.previous_chapter));
    const std::size_t syn = count_tokens(si.next_chapter_synopsis);
    const std::size_t next = count_tokens(ex.gold_next_chapter.text);
    per["next_chapter_synopsis"].push_back(syn);
    per["next_chapter"].push_back(next);
    if (next > 0) ratio_sum += 100.0 * static_cast<double>(syn) / static_cast<double>(next);
  }
  for (const auto& [name, v] : per) st.element_tokens[name] = token_stats(v);
  if (!examples.empty()) st.synopsis_ratio_pct = ratio_sum / static_cast<double>(examples.size());
  return st;
}

}  // namespace vrcli
