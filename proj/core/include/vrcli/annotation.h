#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "vrcli/corpus.h"
#include "vrcli/evalkit.h"

namespace vrcli {

using Clock = std::function<std::chrono::system_clock::time_point()>;

// Two continuations of one example to be compared.
struct ComparisonSpec {
  std::string example_id;
  StoryInformation story_information;
  std::string variant_x;
  std::string text_x;
  std::string variant_y;
  std::string text_y;
};

struct ComparisonTask {
  std::string task_id;
  ComparisonSpec spec;
  bool x_on_left = true;  // hidden from annotators
  int target_judgments = 1;

  const std::string& left_variant() const { return x_on_left ? spec.variant_x : spec.variant_y; }
  const std::string& right_variant() const { return x_on_left ? spec.variant_y : spec.variant_x; }
};

struct DimensionAnswer {
  Choice choice = Choice::kSame;  // kA = left, kB = right
  std::string justification;
};

struct SubmissionRecord {
  std::string task_id;
  std::string annotator_id;
  std::map<Dimension, DimensionAnswer> answers;
  double duration_seconds = 0.0;
  std::int64_t timestamp = 0;  // unix seconds, set by the store
};

struct QualityFlags {
  bool short_duration = false;
  bool short_justification = false;
  bool any() const { return short_duration || short_justification; }
};

struct QualityRules {
  // 50 minutes per 3 datapoints.
  double min_seconds_per_datapoint = 1000.0;
  double min_mean_justification_words = 10.0;
};

QualityFlags quality_flags(const SubmissionRecord& rec, const QualityRules& rules = {});

class NotFoundError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class ConflictError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StoreOptions {
  std::chrono::seconds lease_duration{2 * 60 * 60};
  QualityRules quality;
  int snapshot_every = 100;  // records between snapshots
  Clock clock;               // defaults to the system clock
};

struct ExportResult {
  std::vector<PairwiseJudgment> judgments;
  std::size_t submissions = 0;
  std::size_t excluded_submissions = 0;
};

struct Progress {
  std::size_t tasks = 0;
  std::size_t completed_tasks = 0;
  std::size_t submissions = 0;
  std::size_t flagged_submissions = 0;
  std::size_t active_leases = 0;
};

// Task pool and judgments persisted as an append-only JSONL log
// (data_dir/log.jsonl) plus a periodic snapshot (data_dir/snapshot.json).
// Leases live in memory only; a restart returns leased tasks to the pool.
// Reads take a shared lock, writes an exclusive one.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path data_dir, StoreOptions options = {});

  // Left/right placement is drawn per task from `seed`; returns the task ids.
  std::vector<std::string> add_tasks(const std::vector<ComparisonSpec>& specs, std::uint64_t seed,
                                     int target_judgments = 1);

  // The annotator's current unexpired lease, else the least-judged open task
  // the annotator has not judged and nobody else holds. Empty when none.
  std::optional<ComparisonTask> next_task(const std::string& annotator_id);

  // Throws NotFoundError for an unknown task, ConflictError for a duplicate
  // (task, annotator) or a task not leased to the annotator, InvalidArgument
  // for a missing dimension.
  QualityFlags submit(SubmissionRecord record);

  ExportResult export_judgments(bool strict_quality) const;
  Progress progress() const;

  std::optional<ComparisonTask> task(const std::string& task_id) const;
  std::size_t log_records() const;
  void write_snapshot();

 private:
  struct Lease {
    std::string task_id;
    std::chrono::system_clock::time_point expires;
  };

  void load();
  void append(const std::string& line);
  void snapshot_locked();
  void apply_task(ComparisonTask t);
  void apply_submission(SubmissionRecord r);
  std::chrono::system_clock::time_point now() const;

  std::filesystem::path dir_;
  StoreOptions options_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, ComparisonTask> tasks_;
  std::vector<SubmissionRecord> submissions_;
  std::map<std::string, std::set<std::string>> judged_by_;  // task -> annotators
  std::map<std::string, Lease> leases_;                     // annotator -> lease
  std::size_t records_ = 0;
};

// JSON payload shown to annotators: no variant names.
std::string task_view_json(const ComparisonTask& task);
SubmissionRecord submission_from_json(std::string_view body);
std::string judgment_to_json(const PairwiseJudgment& j);
PairwiseJudgment judgment_from_json(std::string_view line);

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path static_dir;  // optional UI bundle
};

// HTTP front end:
//   GET  /api/task?annotator=ID     200 task view | 204 + Retry-After
//   POST /api/submission            200 {flags} | 400 | 404 | 409
//   GET  /api/export?quality=strict 200 {judgments, submissions, excluded}
//   GET  /api/progress              200 counts
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, ServerOptions options);
  ~AnnotationServer();

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vrcli
