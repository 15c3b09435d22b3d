#include "vrcli/synthesis.h"

#include <algorithm>
#include <cmath>
#include <future>
#include <mutex>

#include "vrcli/errors.h"
#include "vrcli/text.h"

namespace vrcli {

namespace {

constexpr std::string_view kSourceHeading = "## Source\n";
constexpr std::string_view kFocusHeading = "## Focus\n";

std::string numbered_summaries(const BookRecord& book, int last_inclusive) {
  std::string out;
  for (int k = 0; k <= last_inclusive && k < static_cast<int>(book.chapter_summaries.size()); ++k)
    out += "Chapter " + std::to_string(k + 1) + ": " + book.chapter_summaries[static_cast<std::size_t>(k)] + "\n";
  return out;
}

std::string synthesis_prompt(std::string_view instruction, std::string_view source,
                             std::string_view focus = {}) {
  std::string p = "# Task\n";
  p.append(instruction);
  p += "\n\n";
  if (!focus.empty()) {
    p.append(kFocusHeading);
    p.append(focus);
    p += "\n\n";
  }
  p.append(kSourceHeading);
  p.append(source);
  p += "\n\n## Output\n";
  return p;
}

}  // namespace

int synthesis_max_tokens(std::size_t input_tokens, int cap, double ratio) {
  const double scaled = std::floor(static_cast<double>(input_tokens) * ratio);
  return std::max(1, static_cast<int>(std::min<double>(cap, scaled)));
}

SynthesisResult synthesize_story_information(const BookRecord& book, const LanguageModel& client,
                                             const SynthesisParams& params,
                                             std::optional<std::vector<int>> indices,
                                             const std::map<int, StoryInformation>& resume) {
  book.validate();
  const std::vector<int> wanted = indices ? *indices : filter_chapters(book);

  auto call = [&](const std::string& prompt, std::size_t input_tokens, int cap) {
    SamplingParams sp;
    sp.temperature = params.temperature;
    sp.top_p = params.top_p;
    sp.top_k = params.top_k;
    sp.max_tokens = synthesis_max_tokens(input_tokens, cap, params.length_ratio);
    return std::string(trim(client.sample(prompt, sp)));
  };

  // The global sketch is shared by every index of the book; computed lazily
  // once so that a fully resumed book issues no requests.
  std::once_flag sketch_once;
  std::string sketch;
  std::string sketch_error;
  auto global_sketch = [&]() {
    std::call_once(sketch_once, [&] {
      const std::string all = numbered_summaries(book, static_cast<int>(book.chapter_summaries.size()) - 1);
      try {
        sketch = call(synthesis_prompt("Write a global sketch of the entire story.", all),
                      client.count_tokens(all), params.sketch_max_tokens);
      } catch (const std::exception& e) {
        sketch_error = e.what();
      }
    });
    if (!sketch_error.empty()) throw BackendError("global sketch failed: " + sketch_error, true, 1);
    return sketch;
  };

  auto build = [&](int i) -> StoryInformation {
    if (i < 0 || i + 1 >= static_cast<int>(book.chapters.size()))
      throw InvalidArgument("index " + std::to_string(i) + " has no next chapter");
    StoryInformation si;
    si.book_id = book.book_id;
    si.chapter_index = i;
    si.global_sketch = global_sketch();
    const std::string prior = numbered_summaries(book, i);
    si.prior_summary = call(synthesis_prompt("Summarize the story so far.", prior),
                            client.count_tokens(prior), params.sketch_max_tokens);
    const int sheets = std::min<int>(params.max_sheets, static_cast<int>(book.main_characters.size()));
    if (sheets == 0) throw InvalidArgument(book.book_id + " lists no main characters");
    for (int c = 0; c < sheets; ++c) {
      const std::string& name = book.main_characters[static_cast<std::size_t>(c)];
      const std::string source = prior + "\n" + book.chapters[static_cast<std::size_t>(i)].text;
      const std::string draft =
          call(synthesis_prompt("Write a character sheet for the focus character.", source, name),
               client.count_tokens(source), params.sketch_max_tokens);
      const std::string sheet =
          call(synthesis_prompt("Consolidate this character sheet, removing repetition.", draft, name),
               client.count_tokens(draft), params.sheet_max_tokens);
      si.character_sheets.push_back({name, sheet});
    }
    si.previous_chapter = book.chapters[static_cast<std::size_t>(i)].text;
    si.next_chapter_synopsis = book.chapter_summaries[static_cast<std::size_t>(i + 1)];
    si.validate();
    return si;
  };

  SynthesisResult result;
  std::vector<int> todo;
  for (int i : wanted) {
    if (auto it = resume.find(i); it != resume.end()) result.records[i] = it->second;
    else todo.push_back(i);
  }

  struct Outcome {
    std::optional<StoryInformation> si;
    std::string error;
  };
  auto run = [&](int i) -> Outcome {
    try {
      return {build(i), {}};
    } catch (const std::exception& e) {
      return {std::nullopt, e.what()};
    }
  };
  const std::size_t width = static_cast<std::size_t>(std::max(1, params.max_inflight));
  for (std::size_t start = 0; start < todo.size(); start += width) {
    const std::size_t stop = std::min(todo.size(), start + width);
    std::vector<std::future<Outcome>> pending;
    for (std::size_t k = start; k < stop; ++k)
      pending.push_back(std::async(width == 1 ? std::launch::deferred : std::launch::async, run, todo[k]));
    for (std::size_t k = start; k < stop; ++k) {
      Outcome o = pending[k - start].get();
      if (o.si) result.records[todo[k]] = std::move(*o.si);
      else result.errors[todo[k]] = o.error;
    }
  }

  double ratio = 0.0;
  for (const auto& [i, si] : result.records) {
    const std::size_t next = client.count_tokens(book.chapters[static_cast<std::size_t>(i + 1)].text);
    if (next > 0) ratio += 100.0 * static_cast<double>(client.count_tokens(si.next_chapter_synopsis)) / static_cast<double>(next);
  }
  if (!result.records.empty()) result.synopsis_ratio_pct = ratio / static_cast<double>(result.records.size());
  return result;
}

std::vector<NcpExample> build_examples(const BookRecord& book,
                                       const std::map<int, StoryInformation>& records, Split split) {
  std::vector<NcpExample> out;
  for (const auto& [i, si] : records) {
    NcpExample ex;
    ex.story_information = si;
    ex.gold_next_chapter = book.chapters.at(static_cast<std::size_t>(i + 1));
    ex.split = split;
    ex.genre_tags = book.genre_tags;
    ex.validate();
    out.push_back(std::move(ex));
  }
  return out;
}

ScoredCompletion ExtractiveCompletionClient::score(std::string_view, std::string_view) const {
  throw InvalidArgument("extractive client cannot score completions");
}

std::string ExtractiveCompletionClient::sample(std::string_view prompt, const SamplingParams& params) const {
  params.validate();
  const std::size_t src = prompt.rfind(kSourceHeading);
  if (src == std::string_view::npos) return {};
  std::string_view source = prompt.substr(src + kSourceHeading.size());
  if (const std::size_t end = source.rfind("\n\n## Output\n"); end != std::string_view::npos)
    source = source.substr(0, end);

  std::string focus;
  if (const std::size_t f = prompt.find(kFocusHeading); f != std::string_view::npos && f < src) {
    const std::string_view rest = prompt.substr(f + kFocusHeading.size());
    focus = std::string(trim(rest.substr(0, rest.find('\n'))));
  }

  std::vector<std::string_view> words;
  if (!focus.empty()) {
    // Keep sentences that mention the focus character, in order.
    std::size_t start = 0;
    for (std::size_t k = 0; k <= source.size(); ++k) {
      if (k == source.size() || source[k] == '.' || source[k] == '\n') {
        const std::string_view sentence = source.substr(start, k - start + (k < source.size() ? 1 : 0));
        if (sentence.find(focus) != std::string_view::npos)
          for (auto w : split_words(sentence)) words.push_back(w);
        start = k + 1;
      }
    }
    if (words.empty()) words = {focus};
  } else {
    words = split_words(source);
  }
  if (static_cast<int>(words.size()) > params.max_tokens) words.resize(static_cast<std::size_t>(params.max_tokens));
  std::string out;
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (k) out.push_back(' ');
    out.append(words[k]);
  }
  return out;
}

std::size_t ExtractiveCompletionClient::count_tokens(std::string_view text) const { return word_count(text); }

}  // namespace vrcli
