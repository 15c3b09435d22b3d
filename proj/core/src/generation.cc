#include "vrcli/generation.h"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <map>
#include <unordered_map>

#include "vrcli/errors.h"
#include "vrcli/prompts.h"
#include "vrcli/text.h"

namespace vrcli {

std::string_view to_string(GenerationVariant v) {
  switch (v) {
    case GenerationVariant::kBase: return "base";
    case GenerationVariant::kBaseReasoning: return "base-reasoning";
    case GenerationVariant::kRlTrained: return "rl";
    case GenerationVariant::kExternal: return "external";
  }
  return "?";
}

GenerationVariant parse_generation_variant(std::string_view name) {
  if (name == "base") return GenerationVariant::kBase;
  if (name == "base-reasoning" || name == "base_reasoning") return GenerationVariant::kBaseReasoning;
  if (name == "rl" || name == "rl_trained" || name == "rl-trained") return GenerationVariant::kRlTrained;
  if (name == "external") return GenerationVariant::kExternal;
  throw InvalidArgument("unknown generation variant '" + std::string(name) + "'");
}

bool uses_plan(GenerationVariant v) { return v != GenerationVariant::kBase; }

LengthBounds length_bounds(std::size_t gold_tokens) {
  if (gold_tokens == 0) throw InvalidArgument("gold chapter has no tokens");
  return {(gold_tokens + 1) / 2, (3 * gold_tokens) / 2};
}

GenerationJob GenerationJob::make(NcpExample example, GenerationVariant variant,
                                  const LanguageModel& generator, std::optional<std::string> plan) {
  if (variant == GenerationVariant::kBase && plan)
    throw InvalidArgument("base generation takes no plan");
  if (variant == GenerationVariant::kExternal && !plan)
    throw InvalidArgument("external variant requires a supplied plan");
  GenerationJob job;
  job.bounds = length_bounds(generator.count_tokens(example.gold_next_chapter.text));
  job.tokenizer = generator.identity();
  job.example = std::move(example);
  job.variant = variant;
  job.plan = std::move(plan);
  return job;
}

GenerationResult generate_chapter(const GenerationJob& job, const LanguageModel& generator,
                                  const SamplingParams& sampling, const PlanSource* plans) {
  GenerationResult out;
  out.example_id = job.example.id();
  out.variant = job.variant;
  if (uses_plan(job.variant)) {
    if (job.plan) {
      out.plan = job.plan;
    } else {
      if (!plans || !plans->planner)
        throw InvalidArgument("job " + out.example_id + " needs a plan but no planner was given");
      SamplingParams p = plans->sampling;
      p.seed = p.seed.value_or(0) ^ fnv1a64(out.example_id);
      const auto trace = plans->planner->sample(assemble_reasoning_prompt(job.example.story_information), p);
      out.plan = extract_plan(trace, plans->markers).plan;
    }
  }

  SamplingParams p = sampling;
  p.stop_markers.clear();
  p.min_tokens = static_cast<int>(job.bounds.min_tokens);
  p.max_tokens = static_cast<int>(job.bounds.max_tokens);
  out.raw_text = generator.sample(assemble_generation_prompt(job.example.story_information, out.plan), p);
  out.token_count = generator.count_tokens(out.raw_text);
  out.truncated_text = truncate_chapter(out.raw_text);
  return out;
}

namespace {

std::string normalize_marker_line(std::string_view line) {
  line = trim(line);
  while (!line.empty() && (line.front() == '#' || line.front() == '*' || line.front() == ' ' ||
                           line.front() == '\t'))
    line.remove_prefix(1);
  return to_lower_ascii(line);
}

bool matches_marker(const std::string& normalized_line, const std::vector<std::string>& markers) {
  for (const auto& marker : markers) {
    const std::string m = normalize_marker_line(marker);
    if (m.empty() || !normalized_line.starts_with(m)) continue;
    const bool letters_after = std::any_of(normalized_line.begin() + static_cast<std::ptrdiff_t>(m.size()),
                                           normalized_line.end(),
                                           [](unsigned char c) { return std::isalpha(c) != 0; });
    if (!letters_after) return true;
  }
  return false;
}

void consider(TruncationCut& best, TruncationRule rule, std::size_t offset) {
  if (best.rule == TruncationRule::kNone || offset < best.offset ||
      (offset == best.offset && rule < best.rule))
    best = {rule, offset};
}

}  // namespace

TruncationCut find_truncation_cut(std::string_view text, const TruncationConfig& cfg) {
  TruncationCut best{TruncationRule::kNone, text.size()};

  // Line rules.
  std::unordered_map<std::string_view, int> line_counts;
  std::size_t start = 0;
  bool marker_found = false;
  bool line_found = false;
  while (start <= text.size() && !(marker_found && line_found)) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    if (!marker_found && matches_marker(normalize_marker_line(line), cfg.end_markers)) {
      consider(best, TruncationRule::kEndMarker, start);
      marker_found = true;
    }
    const std::string_view trimmed = trim(line);
    if (!line_found && word_count(trimmed) > cfg.line_min_words &&
        ++line_counts[trimmed] == cfg.line_repeats) {
      consider(best, TruncationRule::kRepeatedLine, start);
      line_found = true;
    }
    if (end == text.size()) break;
    start = end + 1;
  }

  // Chunk rules over a sliding window of words, stride 1.
  const auto spans = split_word_spans(text);
  const std::size_t w = cfg.chunk_words;
  if (w == 0 || spans.size() < w) return best;
  std::unordered_map<std::string_view, std::uint32_t> ids;
  std::vector<std::uint32_t> word_ids;
  word_ids.reserve(spans.size());
  for (const auto& s : spans)
    word_ids.push_back(ids.emplace(s.word, static_cast<std::uint32_t>(ids.size())).first->second);

  std::unordered_map<std::string, int> chunk_counts;
  std::string key(w * sizeof(std::uint32_t), '\0');
  for (std::size_t i = 0; i + w <= spans.size(); ++i) {
    if (spans[i].offset >= best.offset) break;
    std::memcpy(key.data(), word_ids.data() + i, key.size());
    const int seen = ++chunk_counts[key];
    bool fire3 = seen == cfg.chunk_repeats;
    bool fire4 = false;
    if (seen == 2) {
      std::vector<std::uint32_t> window(word_ids.begin() + static_cast<std::ptrdiff_t>(i),
                                        word_ids.begin() + static_cast<std::ptrdiff_t>(i + w));
      std::sort(window.begin(), window.end());
      const auto unique = static_cast<std::size_t>(std::unique(window.begin(), window.end()) - window.begin());
      fire4 = unique <= cfg.low_diversity_unique;
    }
    if (fire3) consider(best, TruncationRule::kRepeatedChunk, spans[i].offset);
    if (fire4) consider(best, TruncationRule::kLowDiversityChunk, spans[i].offset);
    if (fire3 || fire4) break;
  }
  return best;
}

std::string truncate_chapter(std::string_view text, const TruncationConfig& cfg) {
  std::string_view current = text;
  for (;;) {
    const auto cut = find_truncation_cut(current, cfg);
    if (cut.rule == TruncationRule::kNone) return std::string(current);
    std::string_view next = current.substr(0, cut.offset);
    while (!next.empty() && std::isspace(static_cast<unsigned char>(next.back()))) next.remove_suffix(1);
    if (next.size() == current.size()) return std::string(current);
    current = next;
  }
}

}  // namespace vrcli
