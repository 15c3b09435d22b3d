#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "fixtures.h"
#include "vrcli/dataset.h"
#include "vrcli/prompts.h"

using namespace vrcli;

namespace {

// Set VRCLI_UPDATE_GOLDEN=1 to rewrite the frozen files after an intended
// template change (and bump kPromptTemplateVersion).
void expect_golden(const std::string& name, const std::string& actual) {
  const auto path = std::filesystem::path(VRCLI_GOLDEN_DIR) / name;
  if (std::getenv("VRCLI_UPDATE_GOLDEN")) write_file_atomic(path, actual);
  ASSERT_TRUE(std::filesystem::exists(path)) << path;
  EXPECT_EQ(read_file(path), actual) << "golden mismatch: " << path;
}

std::size_t occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Prompts, ReasoningGolden) { expect_golden("reasoning_prompt.txt", assemble_reasoning_prompt(fixture::story())); }

TEST(Prompts, GenerationBaseGolden) {
  expect_golden("generation_prompt_base.txt", assemble_generation_prompt(fixture::story()));
}

TEST(Prompts, GenerationPlanGolden) {
  expect_golden("generation_prompt_plan.txt",
                assemble_generation_prompt(fixture::story(), std::string("Teo arrives at dusk; Mara hides the map.")));
}

TEST(Prompts, EachFieldOnceInFixedOrder) {
  StoryInformation si = fixture::story();
  si.global_sketch = "FIELD_A";
  si.prior_summary = "FIELD_B";
  si.character_sheets = {{"Name", "FIELD_C"}};
  si.previous_chapter = "FIELD_D";
  si.next_chapter_synopsis = "FIELD_E";
  for (const auto& p : {assemble_reasoning_prompt(si), assemble_generation_prompt(si)}) {
    std::size_t last = 0;
    for (const char* f : {"FIELD_A", "FIELD_B", "FIELD_C", "FIELD_D", "FIELD_E"}) {
      EXPECT_EQ(occurrences(p, f), 1u) << f;
      const auto at = p.find(f);
      EXPECT_GT(at, last) << f;
      last = at;
    }
  }
}

TEST(Prompts, SynopsisChangeIsLocal) {
  auto a = fixture::story();
  auto b = a;
  b.next_chapter_synopsis = "Something else entirely happens.";
  const auto pa = assemble_reasoning_prompt(a);
  const auto pb = assemble_reasoning_prompt(b);
  const auto at = pa.find(a.next_chapter_synopsis);
  ASSERT_NE(at, std::string::npos);
  EXPECT_EQ(pa.substr(0, at), pb.substr(0, at));
  EXPECT_EQ(pa.substr(at + a.next_chapter_synopsis.size()), pb.substr(at + b.next_chapter_synopsis.size()));
}

TEST(Prompts, PlanSectionOnlyWithPlan) {
  const auto si = fixture::story();
  const auto base = assemble_generation_prompt(si);
  EXPECT_EQ(base.find("Plan"), std::string::npos);
  const auto with = assemble_generation_prompt(si, std::string("P-UNIQUE"));
  const auto at = with.find("P-UNIQUE");
  ASSERT_NE(at, std::string::npos);
  EXPECT_GT(at, with.find(si.next_chapter_synopsis));
  // The plan form extends the base form.
  EXPECT_EQ(with.substr(0, base.size()), base);
}
