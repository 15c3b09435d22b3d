#include "vrcli/annotation.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>

#include <json.hpp>

#include "vrcli/dataset.h"
#include "vrcli/errors.h"
#include "vrcli/rng.h"
#include "vrcli/text.h"

namespace vrcli {

using nlohmann::json;
namespace fs = std::filesystem;

QualityFlags quality_flags(const SubmissionRecord& rec, const QualityRules& rules) {
  QualityFlags f;
  f.short_duration = rec.duration_seconds < rules.min_seconds_per_datapoint;
  double words = 0.0;
  for (const auto& [dim, ans] : rec.answers) words += static_cast<double>(word_count(ans.justification));
  const double mean = rec.answers.empty() ? 0.0 : words / static_cast<double>(rec.answers.size());
  f.short_justification = mean < rules.min_mean_justification_words;
  return f;
}

namespace {

json si_json(const StoryInformation& si) {
  json sheets = json::array();
  for (const auto& cs : si.character_sheets) sheets.push_back({{"name", cs.name}, {"text", cs.text}});
  return {{"book_id", si.book_id},
          {"chapter_index", si.chapter_index},
          {"global_sketch", si.global_sketch},
          {"prior_summary", si.prior_summary},
          {"character_sheets", sheets},
          {"previous_chapter", si.previous_chapter},
          {"next_chapter_synopsis", si.next_chapter_synopsis}};
}

StoryInformation si_from(const json& j) {
  StoryInformation si;
  si.book_id = j.at("book_id");
  si.chapter_index = j.at("chapter_index");
  si.global_sketch = j.at("global_sketch");
  si.prior_summary = j.at("prior_summary");
  for (const auto& cs : j.at("character_sheets")) si.character_sheets.push_back({cs.at("name"), cs.at("text")});
  si.previous_chapter = j.at("previous_chapter");
  si.next_chapter_synopsis = j.at("next_chapter_synopsis");
  return si;
}

json task_record(const ComparisonTask& t) {
  return {{"type", "task"},
          {"task_id", t.task_id},
          {"example_id", t.spec.example_id},
          {"story_information", si_json(t.spec.story_information)},
          {"variant_x", t.spec.variant_x},
          {"text_x", t.spec.text_x},
          {"variant_y", t.spec.variant_y},
          {"text_y", t.spec.text_y},
          {"x_on_left", t.x_on_left},
          {"target_judgments", t.target_judgments}};
}

ComparisonTask task_from(const json& j) {
  ComparisonTask t;
  t.task_id = j.at("task_id");
  t.spec.example_id = j.at("example_id");
  t.spec.story_information = si_from(j.at("story_information"));
  t.spec.variant_x = j.at("variant_x");
  t.spec.text_x = j.at("text_x");
  t.spec.variant_y = j.at("variant_y");
  t.spec.text_y = j.at("text_y");
  t.x_on_left = j.at("x_on_left");
  t.target_judgments = j.at("target_judgments");
  return t;
}

json answers_json(const SubmissionRecord& r) {
  json out = json::object();
  for (const auto& [dim, ans] : r.answers)
    out[std::string(to_string(dim))] = {{"choice", std::string(to_string(ans.choice))},
                                        {"justification", ans.justification}};
  return out;
}

json submission_record(const SubmissionRecord& r) {
  return {{"type", "submission"},
          {"task_id", r.task_id},
          {"annotator", r.annotator_id},
          {"duration_seconds", r.duration_seconds},
          {"timestamp", r.timestamp},
          {"judgments", answers_json(r)}};
}

SubmissionRecord submission_from(const json& j) {
  SubmissionRecord r;
  r.task_id = j.at("task_id");
  r.annotator_id = j.at("annotator");
  r.duration_seconds = j.at("duration_seconds");
  r.timestamp = j.value("timestamp", std::int64_t{0});
  for (const auto& [name, ans] : j.at("judgments").items())
    r.answers[parse_dimension(name)] = {parse_choice(ans.at("choice").get<std::string>()),
                                        ans.value("justification", "")};
  return r;
}

}  // namespace

AnnotationStore::AnnotationStore(fs::path data_dir, StoreOptions options)
    : dir_(std::move(data_dir)), options_(std::move(options)) {
  if (!options_.clock) options_.clock = [] { return std::chrono::system_clock::now(); };
  fs::create_directories(dir_);
  load();
}

std::chrono::system_clock::time_point AnnotationStore::now() const { return options_.clock(); }

void AnnotationStore::apply_task(ComparisonTask t) {
  const std::string id = t.task_id;
  tasks_[id] = std::move(t);
  judged_by_[id];
}

void AnnotationStore::apply_submission(SubmissionRecord r) {
  judged_by_[r.task_id].insert(r.annotator_id);
  submissions_.push_back(std::move(r));
}

void AnnotationStore::load() {
  std::vector<json> records;
  std::size_t skip = 0;
  const fs::path snap = dir_ / "snapshot.json";
  const fs::path log = dir_ / "log.jsonl";
  std::vector<std::string> log_lines;
  if (fs::exists(log)) {
    const std::string data = read_file(log);
    for (const auto line : split_lines(data))
      if (!trim(line).empty()) log_lines.emplace_back(line);
  }
  if (fs::exists(snap)) {
    try {
      const json s = json::parse(read_file(snap));
      const std::size_t n = s.at("records");
      // A snapshot ahead of the log is ignored; the log is authoritative.
      if (n <= log_lines.size()) {
        for (const auto& r : s.at("entries")) records.push_back(r);
        skip = n;
      }
    } catch (const json::exception&) {
      records.clear();
      skip = 0;
    }
  }
  for (std::size_t i = skip; i < log_lines.size(); ++i) {
    try {
      records.push_back(json::parse(log_lines[i]));
    } catch (const json::exception& e) {
      // A torn final line from a crash mid-append is dropped; anything else is corruption.
      if (i + 1 == log_lines.size()) break;
      throw InvalidArgument("corrupt annotation log line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  for (const auto& r : records) {
    const std::string type = r.at("type");
    if (type == "task") apply_task(task_from(r));
    else if (type == "submission") apply_submission(submission_from(r));
  }
  records_ = records.size();
}

void AnnotationStore::append(const std::string& line) {
  std::ofstream out(dir_ / "log.jsonl", std::ios::app | std::ios::binary);
  if (!out) throw InvalidArgument("cannot append to annotation log in " + dir_.string());
  out << line << '\n';
  out.flush();
  if (!out) throw InvalidArgument("annotation log write failed");
  ++records_;
}

void AnnotationStore::write_snapshot() {
  std::unique_lock lock(mutex_);
  snapshot_locked();
}

void AnnotationStore::snapshot_locked() {
  json entries = json::array();
  for (const auto& [id, t] : tasks_) entries.push_back(task_record(t));
  for (const auto& s : submissions_) entries.push_back(submission_record(s));
  write_file_atomic(dir_ / "snapshot.json", json{{"records", records_}, {"entries", entries}}.dump());
}

std::vector<std::string> AnnotationStore::add_tasks(const std::vector<ComparisonSpec>& specs,
                                                    std::uint64_t seed, int target_judgments) {
  if (target_judgments < 1) throw InvalidArgument("target_judgments must be >= 1");
  std::unique_lock lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& spec : specs) {
    if (spec.variant_x == spec.variant_y) throw InvalidArgument("a comparison needs two different variants");
    ComparisonTask t;
    char buf[32];
    std::snprintf(buf, sizeof buf, "t%06zu", tasks_.size() + 1);
    t.task_id = buf;
    t.spec = spec;
    Rng rng(Rng::derive_seed(seed, t.task_id));
    t.x_on_left = rng.below(2) == 0;
    t.target_judgments = target_judgments;
    append(task_record(t).dump());
    ids.push_back(t.task_id);
    apply_task(std::move(t));
    if (options_.snapshot_every > 0 && records_ % static_cast<std::size_t>(options_.snapshot_every) == 0)
      snapshot_locked();
  }
  return ids;
}

std::optional<ComparisonTask> AnnotationStore::next_task(const std::string& annotator_id) {
  if (annotator_id.empty()) throw InvalidArgument("annotator id is required");
  std::unique_lock lock(mutex_);
  const auto t_now = now();
  for (auto it = leases_.begin(); it != leases_.end();) {
    if (it->second.expires <= t_now) it = leases_.erase(it);
    else ++it;
  }
  if (auto it = leases_.find(annotator_id); it != leases_.end()) return tasks_.at(it->second.task_id);

  std::map<std::string, int> leased;
  for (const auto& [who, lease] : leases_) ++leased[lease.task_id];
  const ComparisonTask* best = nullptr;
  std::size_t best_count = 0;
  for (const auto& [id, t] : tasks_) {
    const auto& judged = judged_by_[id];
    if (judged.contains(annotator_id)) continue;
    if (static_cast<int>(judged.size()) + leased[id] >= t.target_judgments) continue;
    if (!best || judged.size() < best_count) {
      best = &t;
      best_count = judged.size();
    }
  }
  if (!best) return std::nullopt;
  leases_[annotator_id] = {best->task_id, t_now + options_.lease_duration};
  return *best;
}

QualityFlags AnnotationStore::submit(SubmissionRecord record) {
  std::unique_lock lock(mutex_);
  if (!tasks_.contains(record.task_id)) throw NotFoundError("unknown task " + record.task_id);
  if (judged_by_[record.task_id].contains(record.annotator_id))
    throw ConflictError("annotator " + record.annotator_id + " already judged " + record.task_id);
  const auto lease = leases_.find(record.annotator_id);
  if (lease == leases_.end() || lease->second.task_id != record.task_id || lease->second.expires <= now())
    throw ConflictError("task " + record.task_id + " is not leased to " + record.annotator_id +
                        " (lease missing or expired)");
  for (auto d : kAllDimensions)
    if (!record.answers.contains(d))
      throw InvalidArgument("submission lacks dimension '" + std::string(to_string(d)) + "'");
  if (record.duration_seconds < 0) throw InvalidArgument("duration must be >= 0");
  record.timestamp = std::chrono::duration_cast<std::chrono::seconds>(now().time_since_epoch()).count();
  append(submission_record(record).dump());
  leases_.erase(lease);
  const QualityFlags flags = quality_flags(record, options_.quality);
  apply_submission(std::move(record));
  if (options_.snapshot_every > 0 && records_ % static_cast<std::size_t>(options_.snapshot_every) == 0)
    snapshot_locked();
  return flags;
}

ExportResult AnnotationStore::export_judgments(bool strict_quality) const {
  std::shared_lock lock(mutex_);
  ExportResult out;
  for (const auto& s : submissions_) {
    ++out.submissions;
    if (strict_quality && quality_flags(s, options_.quality).any()) {
      ++out.excluded_submissions;
      continue;
    }
    const ComparisonTask& t = tasks_.at(s.task_id);
    for (const auto& [dim, ans] : s.answers) {
      PairwiseJudgment j;
      j.comparison_id = t.task_id;
      j.example_id = t.spec.example_id;
      j.variant_a = t.spec.variant_x;
      j.variant_b = t.spec.variant_y;
      j.dimension = dim;
      j.annotator_id = s.annotator_id;
      j.duration_seconds = s.duration_seconds;
      j.justification = ans.justification;
      // Left/right choices map back to x/y through the stored placement.
      if (ans.choice == Choice::kSame) j.choice = Choice::kSame;
      else j.choice = ((ans.choice == Choice::kA) == t.x_on_left) ? Choice::kA : Choice::kB;
      out.judgments.push_back(std::move(j));
    }
  }
  return out;
}

Progress AnnotationStore::progress() const {
  std::shared_lock lock(mutex_);
  Progress p;
  p.tasks = tasks_.size();
  for (const auto& [id, t] : tasks_)
    if (static_cast<int>(judged_by_.at(id).size()) >= t.target_judgments) ++p.completed_tasks;
  p.submissions = submissions_.size();
  for (const auto& s : submissions_)
    if (quality_flags(s, options_.quality).any()) ++p.flagged_submissions;
  const auto t_now = now();
  for (const auto& [who, lease] : leases_)
    if (lease.expires > t_now) ++p.active_leases;
  return p;
}

std::optional<ComparisonTask> AnnotationStore::task(const std::string& task_id) const {
  std::shared_lock lock(mutex_);
  const auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return std::nullopt;
  return it->second;
}

std::size_t AnnotationStore::log_records() const {
  std::shared_lock lock(mutex_);
  return records_;
}

std::string task_view_json(const ComparisonTask& task) {
  const bool left_is_x = task.x_on_left;
  json dims = json::array();
  for (auto d : kAllDimensions) dims.push_back(std::string(to_string(d)));
  return json{{"task_id", task.task_id},
              {"story_information", si_json(task.spec.story_information)},
              {"continuation_a", left_is_x ? task.spec.text_x : task.spec.text_y},
              {"continuation_b", left_is_x ? task.spec.text_y : task.spec.text_x},
              {"dimensions", dims}}
      .dump();
}

SubmissionRecord submission_from_json(std::string_view body) {
  try {
    const json j = json::parse(body);
    SubmissionRecord r;
    r.task_id = j.at("task_id");
    r.annotator_id = j.at("annotator");
    r.duration_seconds = j.at("duration_seconds");
    for (const auto& [name, ans] : j.at("judgments").items())
      r.answers[parse_dimension(name)] = {parse_choice(ans.at("choice").get<std::string>()),
                                          ans.value("justification", "")};
    return r;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed submission: ") + e.what());
  }
}

std::string judgment_to_json(const PairwiseJudgment& j) {
  return json{{"comparison_id", j.comparison_id},
              {"example_id", j.example_id},
              {"variant_a", j.variant_a},
              {"variant_b", j.variant_b},
              {"dimension", std::string(to_string(j.dimension))},
              {"choice", std::string(to_string(j.choice))},
              {"annotator", j.annotator_id},
              {"duration_seconds", j.duration_seconds},
              {"justification", j.justification}}
      .dump();
}

PairwiseJudgment judgment_from_json(std::string_view line) {
  try {
    const json j = json::parse(line);
    PairwiseJudgment p;
    p.comparison_id = j.value("comparison_id", "");
    p.example_id = j.value("example_id", "");
    p.variant_a = j.at("variant_a");
    p.variant_b = j.at("variant_b");
    p.dimension = parse_dimension(j.at("dimension").get<std::string>());
    p.choice = parse_choice(j.at("choice").get<std::string>());
    p.annotator_id = j.value("annotator", "");
    p.duration_seconds = j.value("duration_seconds", 0.0);
    p.justification = j.value("justification", "");
    return p;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed judgment: ") + e.what());
  }
}

}  // namespace vrcli
