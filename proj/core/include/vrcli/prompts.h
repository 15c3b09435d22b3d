#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "vrcli/corpus.h"

namespace vrcli {

// Bumping this invalidates baseline caches keyed on it.
inline constexpr std::string_view kPromptTemplateVersion = "ncp-prompt-v1";

// Prompt asking the reasoning policy to plan chapter i+1. Contains each SI
// field exactly once under a labeled heading, in a fixed order, and ends with
// an open "Reasoning" section.
std::string assemble_reasoning_prompt(const StoryInformation& si);

// Prompt for the story generator. Without a plan this is the Base form; with a
// plan, a plan section is appended after the story information. The prompt
// ends where the chapter text begins.
std::string assemble_generation_prompt(const StoryInformation& si,
                                       const std::optional<std::string>& plan = std::nullopt);

}  // namespace vrcli
