#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vrcli/corpus.h"
#include "vrcli/grpo.h"
#include "vrcli/lm.h"

namespace vrcli {

enum class GenerationVariant { kBase, kBaseReasoning, kRlTrained, kExternal };

std::string_view to_string(GenerationVariant v);
// Accepts "base", "base-reasoning"/"base_reasoning", "rl"/"rl_trained", "external".
GenerationVariant parse_generation_variant(std::string_view name);
bool uses_plan(GenerationVariant v);

// Token bounds for a generated chapter relative to the gold chapter length n:
// [ceil(n / 2), floor(3n / 2)].
struct LengthBounds {
  std::size_t min_tokens = 0;
  std::size_t max_tokens = 0;

  bool contains(std::size_t n) const { return n >= min_tokens && n <= max_tokens; }
};
LengthBounds length_bounds(std::size_t gold_tokens);

struct GenerationJob {
  NcpExample example;
  GenerationVariant variant = GenerationVariant::kBase;
  // Required for kExternal; for reasoning variants it is generated on the fly
  // when absent.
  std::optional<std::string> plan;
  LengthBounds bounds;
  // Identity of the backend whose tokenizer measured the gold chapter.
  std::string tokenizer;

  // Bounds come from the generator's token count of the gold chapter.
  static GenerationJob make(NcpExample example, GenerationVariant variant,
                            const LanguageModel& generator,
                            std::optional<std::string> plan = std::nullopt);
};

// Where plans come from when a reasoning job has none.
struct PlanSource {
  const LanguageModel* planner = nullptr;
  SamplingParams sampling;
  PlanMarkerConfig markers;
};

struct GenerationResult {
  std::string example_id;
  GenerationVariant variant = GenerationVariant::kBase;
  std::optional<std::string> plan;
  std::string raw_text;
  std::string truncated_text;
  std::size_t token_count = 0;  // of raw_text, under the generator tokenizer
};

// Samples the next chapter with min/max tokens pinned to the job bounds. Stop
// markers in `sampling` are ignored; truncation handles chapter ends instead.
// Backend failures propagate as BackendError.
GenerationResult generate_chapter(const GenerationJob& job, const LanguageModel& generator,
                                  const SamplingParams& sampling = {},
                                  const PlanSource* plans = nullptr);

struct TruncationConfig {
  std::string marker_version = "eoc-markers-v1";
  // Matched case-insensitively against trimmed lines with leading '#'/'*'
  // decoration removed; a line matches when it starts with a marker and the
  // remainder has no letters ("End of Chapter 3" matches, "The end of the
  // road" does not).
  std::vector<std::string> end_markers = {"### End of Chapter", "End of Chapter", "The End"};
  std::size_t line_min_words = 10;  // lines with more words than this count
  int line_repeats = 3;
  std::size_t chunk_words = 20;
  int chunk_repeats = 10;
  std::size_t low_diversity_unique = 9;
};

enum class TruncationRule { kNone = 0, kEndMarker = 1, kRepeatedLine = 2, kRepeatedChunk = 3, kLowDiversityChunk = 4 };

struct TruncationCut {
  TruncationRule rule = TruncationRule::kNone;
  std::size_t offset = 0;  // byte offset of the cut; text.size() when no rule fires
};

// One scan: the earliest cut over all rules. On equal offsets the lower rule
// number is reported.
TruncationCut find_truncation_cut(std::string_view text, const TruncationConfig& cfg = {});

// Repeatedly cuts at the earliest rule match and strips trailing whitespace
// until no rule fires. The result is a prefix of `text`, and text with no
// match is returned unchanged.
std::string truncate_chapter(std::string_view text, const TruncationConfig& cfg = {});

}  // namespace vrcli
