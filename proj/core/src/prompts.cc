#include "vrcli/prompts.h"

namespace vrcli {
namespace {

void append_story_information(std::string& out, const StoryInformation& si) {
  out += "## Global Story Sketch\n";
  out += si.global_sketch;
  out += "\n\n## Summary of the Story So Far\n";
  out += si.prior_summary;
  out += "\n\n## Character Sheets\n";
  for (const auto& sheet : si.character_sheets) {
    out += "### ";
    out += sheet.name;
    out += "\n";
    out += sheet.text;
    out += "\n";
  }
  out += "\n## Previous Chapter\n";
  out += si.previous_chapter;
  out += "\n\n## Next Chapter Synopsis\n";
  out += si.next_chapter_synopsis;
  out += "\n\n";
}

}  // namespace

std::string assemble_reasoning_prompt(const StoryInformation& si) {
  std::string out;
  out +=
      "## Task\n"
      "You are planning the next chapter of a novel. Read the story information below, "
      "reason about what should happen next and how, then finish with a section that "
      "begins \"### In summary:\" and gives a detailed plan for the next chapter.\n\n";
  append_story_information(out, si);
  out += "## Reasoning\n";
  return out;
}

std::string assemble_generation_prompt(const StoryInformation& si,
                                       const std::optional<std::string>& plan) {
  std::string out;
  out +=
      "## Task\n"
      "Write the next chapter of the novel, following the story information below. "
      "Begin the chapter text directly after the final section.\n\n";
  append_story_information(out, si);
  if (plan) {
    out += "## Plan for the Next Chapter\n";
    out += *plan;
    out += "\n\n";
  }
  return out;
}

}  // namespace vrcli
