#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "vrcli/corpus.h"
#include "vrcli/lm.h"

namespace vrcli {

inline constexpr std::string_view kSynthesisTemplateVersion = "synth-v1";

struct SynthesisParams {
  double temperature = 0.6;
  double top_p = 0.9;
  int top_k = 50;
  int sketch_max_tokens = 4096;  // global sketch and prior summary cap
  int sheet_max_tokens = 2048;   // character sheet consolidation cap
  double length_ratio = 0.8;     // max_tokens never exceeds this share of the input
  int max_sheets = 3;
  int max_inflight = 1;
};

// min(cap, floor(ratio * input_tokens)), at least 1.
int synthesis_max_tokens(std::size_t input_tokens, int cap, double ratio);

struct SynthesisResult {
  std::map<int, StoryInformation> records;
  std::map<int, std::string> errors;
  // Mean synopsis / next-chapter token ratio over records, in percent.
  double synopsis_ratio_pct = 0.0;
};

// Builds SI_i for every index in `indices` (default: filter_chapters(book)).
// Indices already present in `resume` are kept and not requested again. A
// failing index is recorded in `errors`; the others still complete. Output
// order is by chapter index regardless of completion order.
SynthesisResult synthesize_story_information(const BookRecord& book, const LanguageModel& client,
                                             const SynthesisParams& params = {},
                                             std::optional<std::vector<int>> indices = std::nullopt,
                                             const std::map<int, StoryInformation>& resume = {});

// Pairs each SI with its gold next chapter; split and genres come from the book.
std::vector<NcpExample> build_examples(const BookRecord& book,
                                       const std::map<int, StoryInformation>& records,
                                       Split split = Split::kTrain);

// Offline stand-in for a summarization model: answers each synthesis prompt
// with the leading words of its source section, preferring sentences that
// mention the focus character when one is given. Scoring is unsupported.
class ExtractiveCompletionClient final : public LanguageModel {
 public:
  BackendKind kind() const override { return BackendKind::kTiny; }
  std::string identity() const override { return "extractive:v1"; }
  ScoredCompletion score(std::string_view prompt, std::string_view completion) const override;
  std::string sample(std::string_view prompt, const SamplingParams& params) const override;
  std::size_t count_tokens(std::string_view text) const override;
};

}  // namespace vrcli
