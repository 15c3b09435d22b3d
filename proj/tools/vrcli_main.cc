// vrcli: one entry point for every pipeline stage.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vrcli/annotation.h"
#include "vrcli/config.h"
#include "vrcli/dataset.h"
#include "vrcli/evalkit.h"
#include "vrcli/generation.h"
#include "vrcli/grpo.h"
#include "vrcli/prompts.h"
#include "vrcli/remote_lm.h"
#include "vrcli/reward.h"
#include "vrcli/synthesis.h"
#include "vrcli/synthetic.h"
#include "vrcli/text.h"
#include "vrcli/tiny_lm.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vrcli;

namespace {

ConfigError config_error(std::string field, std::string message) {
  return ConfigError(std::vector<ConfigIssue>{{std::move(field), std::move(message)}});
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::optional<int> max_inflight;
  bool dry_run = false;
};

PipelineConfig effective_config(const Globals& g) {
  PipelineConfig cfg = g.config_path.empty() ? parse_pipeline_config("{}") : load_pipeline_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.max_inflight) {
    if (*g.max_inflight < 1) throw config_error("--max-inflight", "must be >= 1");
    cfg.max_inflight = *g.max_inflight;
  }
  if (g.backend) {
    if (*g.backend == "tiny") cfg.backend = BackendKind::kTiny;
    else if (*g.backend == "remote") cfg.backend = BackendKind::kRemote;
    else throw config_error("--backend", "must be 'tiny' or 'remote'");
  }
  if (cfg.backend == BackendKind::kRemote) {
    if (cfg.remote.api_base.empty())
      if (const char* v = std::getenv("VRCLI_API_BASE")) cfg.remote.api_base = v;
    if (cfg.remote.api_key.empty())
      if (const char* v = std::getenv("VRCLI_API_KEY")) cfg.remote.api_key = v;
    std::vector<ConfigIssue> issues;
    if (cfg.remote.api_base.empty()) issues.push_back({"remote.api_base", "required (or set VRCLI_API_BASE)"});
    if (cfg.remote.generator_model.empty()) issues.push_back({"remote.generator_model", "required for --backend remote"});
    if (!issues.empty()) throw ConfigError(issues);
  }
  cfg.grpo.seed = cfg.seed;
  cfg.grpo.max_inflight = cfg.max_inflight;
  cfg.synthesis.max_inflight = cfg.max_inflight;
  return cfg;
}

ArtifactHeader header_for(const PipelineConfig& cfg, std::string kind, std::string stage_version) {
  ArtifactHeader h;
  h.kind = std::move(kind);
  h.stage_version = std::move(stage_version);
  h.config_hash = cfg.hash();
  h.seed = cfg.seed;
  h.deterministic = cfg.backend == BackendKind::kTiny;
  return h;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw config_error(what, "path is required");
  if (!fs::exists(path)) throw config_error(what, "file not found: " + path);
}

std::unique_ptr<RemoteLm> remote_model(const PipelineConfig& cfg, const std::string& model) {
  RemoteConfig rc;
  rc.api_base = cfg.remote.api_base;
  rc.api_key = cfg.remote.api_key;
  rc.model = model;
  rc.max_inflight = cfg.max_inflight;
  return std::make_unique<RemoteLm>(rc);
}

// Model files carry an artifact header line before the policy table.
std::string write_model_file(const ArtifactHeader& h, const TinyLmPolicy& policy) {
  return h.to_json_line() + "\n" + policy.serialize();
}

TinyLmPolicy read_model_file(const std::string& path) {
  require_file(path, "model");
  std::string data = read_file(path);
  if (!data.empty() && data.front() == '{') {
    const auto nl = data.find('\n');
    data = nl == std::string::npos ? std::string() : data.substr(nl + 1);
  }
  return TinyLmPolicy::deserialize(data);
}

std::shared_ptr<const TinyLmPolicy> load_frozen(const std::string& path) {
  auto p = std::make_shared<TinyLmPolicy>(read_model_file(path));
  p->freeze();
  return p;
}

std::vector<NcpExample> read_dataset(const std::string& path) {
  require_file(path, "dataset");
  return read_examples(read_file(path)).second;
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content;
    if (!content.empty() && content.back() != '\n') std::cout << '\n';
  } else {
    write_file_atomic(out_path, content);
    std::cerr << "wrote " << out_path << "\n";
  }
}

std::string data_path(const PipelineConfig& cfg, const std::string& override_dir, const std::string& name) {
  return (fs::path(override_dir.empty() ? cfg.paths.data_dir : override_dir) / name).string();
}

// ---- make-corpus ---------------------------------------------------------

void cmd_make_corpus(const Globals& g, const std::string& out, int books) {
  const auto cfg = effective_config(g);
  if (out.empty()) throw config_error("--out", "output directory is required");
  SyntheticCorpusOptions opts;
  opts.books = books;
  opts.seed = cfg.seed;
  const auto corpus = make_synthetic_corpus(opts);
  if (g.dry_run) {
    std::cerr << "dry run: would write " << corpus.size() << " books to " << out << "\n";
    return;
  }
  write_corpus_directory(out, corpus);
  std::cerr << "wrote " << corpus.size() << " synthetic books to " << out << "\n";
}

// ---- ingest / filter / split / stats --------------------------------------

void cmd_ingest(const Globals& g, std::string corpus, const std::string& out_dir) {
  const auto cfg = effective_config(g);
  if (corpus.empty()) corpus = cfg.paths.corpus;
  if (corpus.empty()) throw config_error("paths.corpus", "corpus directory is required (--corpus)");
  if (!fs::is_directory(corpus)) throw config_error("paths.corpus", "directory not found: " + corpus);
  const auto books = load_corpus_directory(corpus, whitespace_token_counter());
  if (g.dry_run) {
    std::cerr << "dry run: " << books.size() << " books parsed from " << corpus << "\n";
    return;
  }
  std::unique_ptr<LanguageModel> client;
  if (cfg.backend == BackendKind::kRemote) client = remote_model(cfg, cfg.remote.generator_model);
  else client = std::make_unique<ExtractiveCompletionClient>();

  std::vector<NcpExample> examples;
  std::size_t failures = 0;
  double ratio = 0.0;
  std::size_t ratio_books = 0;
  for (const auto& book : books) {
    const auto res = synthesize_story_information(book, *client, cfg.synthesis, filter_chapters(book, cfg.filter));
    for (const auto& [i, err] : res.errors) std::cerr << "warning: " << book.book_id << ":" << i << ": " << err << "\n";
    failures += res.errors.size();
    if (!res.records.empty()) {
      ratio += res.synopsis_ratio_pct;
      ++ratio_books;
    }
    for (auto& ex : build_examples(book, res.records)) examples.push_back(std::move(ex));
  }
  write_file_atomic(data_path(cfg, out_dir, "books.jsonl"), write_books(header_for(cfg, "books", "ingest-v1"), books));
  write_file_atomic(data_path(cfg, out_dir, "examples.jsonl"),
                    write_examples(header_for(cfg, "examples", "ingest-v1"), examples));
  std::cerr << "ingested " << books.size() << " books, " << examples.size() << " examples, " << failures
            << " failed indices; mean synopsis/next-chapter ratio "
            << (ratio_books ? ratio / static_cast<double>(ratio_books) : 0.0) << "%\n";
}

void cmd_filter(const Globals& g, const std::string& books_path, const std::string& out) {
  const auto cfg = effective_config(g);
  require_file(books_path, "--books");
  const auto books = read_books(read_file(books_path)).second;
  if (g.dry_run) return;
  std::string body;
  for (const auto& b : books) body += json{{"book_id", b.book_id}, {"eligible", filter_chapters(b, cfg.filter)}}.dump() + "\n";
  emit(out, body);
}

void cmd_split(const Globals& g, const std::string& data_dir) {
  const auto cfg = effective_config(g);
  const std::string books_path = data_path(cfg, data_dir, "books.jsonl");
  const std::string examples_path = data_path(cfg, data_dir, "examples.jsonl");
  require_file(books_path, "books.jsonl");
  require_file(examples_path, "examples.jsonl");
  const auto books = read_books(read_file(books_path)).second;
  const auto examples = read_examples(read_file(examples_path)).second;
  SplitOptions opts;
  opts.counts = cfg.split;
  opts.enforce_constraints = cfg.enforce_split_constraints;
  opts.seed = cfg.seed;
  const auto splits = split_by_book(books, examples, opts);
  if (g.dry_run) {
    std::cerr << "dry run: split " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
              << " examples\n";
    return;
  }
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
    write_file_atomic(data_path(cfg, data_dir, std::string(to_string(s)) + ".jsonl"),
                      write_examples(header_for(cfg, "examples", "split-v1"), splits.get(s)));
  std::string assignment = header_for(cfg, "assignment", "split-v1").to_json_line() + "\n";
  for (const auto& [book, split] : splits.book_assignment)
    assignment += json{{"book_id", book}, {"split", std::string(to_string(split))}}.dump() + "\n";
  write_file_atomic(data_path(cfg, data_dir, "assignment.jsonl"), assignment);
  std::cerr << "split " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
            << " examples\n";
}

void cmd_stats(const Globals& g, const std::string& dataset, const std::string& out) {
  const auto cfg = effective_config(g);
  const auto examples = read_dataset(dataset);
  if (g.dry_run) return;
  const auto st = dataset_stats(examples, whitespace_token_counter(), "whitespace");
  json report = json::parse(st.to_json());
  report["header"] = json::parse(header_for(cfg, "stats", "stats-v1").to_json_line());
  emit(out, report.dump(2));
}

// ---- fit-lm / baseline ----------------------------------------------------

void cmd_fit_lm(const Globals& g, const std::string& data_dir, std::string out) {
  const auto cfg = effective_config(g);
  if (out.empty()) out = cfg.paths.model;
  if (out.empty()) throw config_error("paths.model", "output model path is required (--out)");
  const auto train = read_dataset(data_path(cfg, data_dir, "train.jsonl"));
  std::vector<std::string> texts;
  for (const auto& ex : train) {
    texts.push_back(assemble_reasoning_prompt(ex.story_information));
    texts.push_back(assemble_generation_prompt(ex.story_information) + ex.gold_next_chapter.text);
  }
  TinyLmPolicy::FitOptions fo;
  fo.order = cfg.tiny.order;
  fo.max_vocab = cfg.tiny.max_vocab;
  fo.smoothing = cfg.tiny.smoothing;
  const auto policy = TinyLmPolicy::fit(texts, fo);
  if (g.dry_run) return;
  write_file_atomic(out, write_model_file(header_for(cfg, "tiny-model", "fit-lm-v1"), policy));
  std::cerr << "fitted tiny LM: vocab " << policy.vocab_size() << ", " << policy.table().size() << " contexts\n";
}

std::vector<NcpExample> all_splits(const PipelineConfig& cfg, const std::string& data_dir) {
  std::vector<NcpExample> all;
  for (const char* name : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
    const auto path = data_path(cfg, data_dir, name);
    if (!fs::exists(path)) continue;
    for (auto& ex : read_dataset(path)) all.push_back(std::move(ex));
  }
  if (all.empty()) throw config_error("paths.data_dir", "no split files found; run `vrcli split` first");
  return all;
}

void cmd_baseline(const Globals& g, const std::string& data_dir, std::string model, std::string out) {
  const auto cfg = effective_config(g);
  if (out.empty()) out = cfg.paths.cache;
  if (out.empty()) throw config_error("paths.cache", "cache output path is required (--out)");
  const auto examples = all_splits(cfg, data_dir);
  std::unique_ptr<LanguageModel> generator;
  if (cfg.backend == BackendKind::kRemote) {
    generator = remote_model(cfg, cfg.remote.generator_model);
  } else {
    if (model.empty()) model = cfg.paths.model;
    generator = std::make_unique<TinyLmBackend>(load_frozen(model), "generator");
  }
  if (g.dry_run) return;
  auto cache = build_baseline_cache(examples, *generator, "", cfg.max_inflight);
  cache.set_provenance(cfg.hash(), cfg.seed, "baseline-v1");
  write_file_atomic(out, cache.serialize());
  std::cerr << "baseline cache: " << cache.size() << " entries\n";
}

// ---- train ------------------------------------------------------------------

// Baseline perplexities are only comparable under the generator that produced
// them.
void require_cache_matches(const BaselineCache& cache, const LanguageModel& generator) {
  if (cache.header().backend_identity != generator.identity())
    throw config_error("paths.cache", "baseline cache was built by " + cache.header().backend_identity +
                                          ", but the generator is " + generator.identity() +
                                          "; rerun baseline");
}


void cmd_train(const Globals& g, const std::string& data_dir, std::string model, std::string cache_path,
               std::string out_dir) {
  const auto cfg = effective_config(g);
  if (cache_path.empty()) cache_path = cfg.paths.cache;
  if (out_dir.empty()) out_dir = cfg.paths.checkpoints;
  require_file(cache_path, "paths.cache");
  const auto train_set = read_dataset(data_path(cfg, data_dir, "train.jsonl"));
  const auto val_set = read_dataset(data_path(cfg, data_dir, "val.jsonl"));
  const auto cache = BaselineCache::deserialize(read_file(cache_path));
  cfg.grpo.validate();
  if (g.dry_run) {
    std::cerr << "dry run: " << train_set.size() << " train / " << val_set.size() << " val examples\n";
    return;
  }
  fs::create_directories(out_dir);
  const auto header = header_for(cfg, "train-metrics", "train-v1");

  if (cfg.backend == BackendKind::kRemote) {
    if (cfg.remote.policy_model.empty()) throw config_error("remote.policy_model", "required for remote training");
    const auto generator = remote_model(cfg, cfg.remote.generator_model);
    const auto policy = remote_model(cfg, cfg.remote.policy_model);
    require_cache_matches(cache, *generator);
    GrpoConfig gc = cfg.grpo;
    std::string updates = header.to_json_line() + "\n";
    std::ostringstream hook_out;
    JsonlUpdateHook hook(hook_out);
    std::string metrics = header.to_json_line() + "\n";
    for (int epoch = 1; epoch <= gc.epochs; ++epoch) {
      const auto rb = rollout(*policy, train_set, gc, cfg.reward, cache, *generator,
                              Rng::derive_seed(cfg.seed, "remote-epoch-" + std::to_string(epoch)));
      for (const auto& id : rb.failed_example_ids) std::cerr << "warning: rollout failed for " << id << "\n";
      auto m = emit_step(rb.groups, hook);
      m.epoch = epoch;
      m.step = epoch;
      metrics += to_jsonl(m) + "\n";
    }
    write_file_atomic(fs::path(out_dir) / cfg.remote.updates_out, updates + hook_out.str());
    write_file_atomic(fs::path(out_dir) / "metrics.jsonl", metrics);
    return;
  }

  if (model.empty()) model = cfg.paths.model;
  const auto initial = read_model_file(model);
  auto state = TrainingState::from_initial(initial);
  TinyLmBackend generator(state.reference, "generator");
  require_cache_matches(cache, generator);
  std::string metrics = header.to_json_line() + "\n";
  TrainCallbacks cb;
  cb.on_step = [&](const StepMetrics& m) { metrics += to_jsonl(m) + "\n"; };
  cb.on_epoch = [&](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << ": val mean improvement " << r.val_mean_improvement << ", reward "
              << r.val_mean_reward << "\n";
    CheckpointMeta meta{r.epoch, state.step, r.selection_score, cfg.canonical_json(), cfg.hash(), cfg.seed, "train-v1"};
    char name[32];
    std::snprintf(name, sizeof name, "epoch-%03d.ckpt", r.epoch);
    write_file_atomic(fs::path(out_dir) / name, serialize_checkpoint(*state.policy, meta));
  };
  const auto result = train(state, train_set, val_set, cfg.grpo, cfg.reward, cache, generator, cb);
  CheckpointMeta best{result.best_epoch, 0, result.best_score, cfg.canonical_json(), cfg.hash(), cfg.seed, "train-v1"};
  write_file_atomic(fs::path(out_dir) / "best.ckpt", serialize_checkpoint(result.best_policy, best));
  write_file_atomic(fs::path(out_dir) / "metrics.jsonl", metrics);
  std::cerr << "best epoch " << result.best_epoch << " (score " << result.best_score << ")\n";
}

// ---- generate -------------------------------------------------------------

void cmd_generate(const Globals& g, const std::string& variant_name, const std::string& checkpoint,
                  std::string dataset, std::string model, const std::string& out) {
  const auto cfg = effective_config(g);
  const auto variant = parse_generation_variant(variant_name);
  if (dataset.empty()) dataset = data_path(cfg, "", "test.jsonl");
  const auto examples = read_dataset(dataset);

  std::unique_ptr<LanguageModel> generator;
  std::unique_ptr<LanguageModel> planner;
  if (cfg.backend == BackendKind::kRemote) {
    generator = remote_model(cfg, cfg.remote.generator_model);
    if (uses_plan(variant)) {
      const std::string pm = cfg.remote.policy_model.empty() ? cfg.remote.generator_model : cfg.remote.policy_model;
      planner = remote_model(cfg, pm);
    }
  } else {
    if (model.empty()) model = cfg.paths.model;
    auto reference = load_frozen(model);
    generator = std::make_unique<TinyLmBackend>(reference, "generator");
    if (variant == GenerationVariant::kRlTrained) {
      require_file(checkpoint, "--checkpoint");
      auto policy = std::make_shared<TinyLmPolicy>(deserialize_checkpoint(read_file(checkpoint)).first);
      policy->freeze();
      planner = std::make_unique<TinyLmBackend>(policy, "policy");
    } else if (variant == GenerationVariant::kBaseReasoning) {
      planner = std::make_unique<TinyLmBackend>(reference, "reference");
    }
  }
  if (variant == GenerationVariant::kExternal) throw config_error("--variant", "external plans are not supported by the CLI");
  if (g.dry_run) return;

  PlanSource plans;
  plans.planner = planner.get();
  plans.sampling = cfg.grpo.sampling;
  plans.sampling.max_tokens = cfg.grpo.max_generation_tokens;
  plans.sampling.seed = Rng::derive_seed(cfg.seed, "plans");
  plans.markers = cfg.grpo.plan_markers;

  std::string body = header_for(cfg, "generations", "generate-v1").to_json_line() + "\n";
  std::size_t outside = 0;
  for (const auto& ex : examples) {
    const auto job = GenerationJob::make(ex, variant, *generator);
    SamplingParams sp = cfg.generation;
    sp.seed = Rng::derive_seed(cfg.seed, "generate:" + ex.id());
    auto res = generate_chapter(job, *generator, sp, planner ? &plans : nullptr);
    res.truncated_text = truncate_chapter(res.raw_text, cfg.truncation);
    if (!job.bounds.contains(res.token_count)) ++outside;
    json rec = {{"example_id", res.example_id},
                {"variant", std::string(to_string(res.variant))},
                {"raw_text", res.raw_text},
                {"truncated_text", res.truncated_text},
                {"token_count", res.token_count},
                {"bounds", {job.bounds.min_tokens, job.bounds.max_tokens}}};
    if (res.plan) rec["plan"] = *res.plan;
    body += rec.dump() + "\n";
  }
  emit(out, body);
  if (outside) std::cerr << "warning: " << outside << " generations outside their length bounds\n";
}

// ---- evaluate -------------------------------------------------------------

struct Generation {
  std::string example_id;
  std::string variant;
  std::string text;
};

std::vector<Generation> read_generations(const std::string& path) {
  require_file(path, "--chapters");
  const auto data = read_file(path);
  std::vector<Generation> out;
  bool first = true;
  for (const auto line : split_lines(data)) {
    if (trim(line).empty()) continue;
    const json j = json::parse(line);
    if (first && j.contains("kind")) {
      first = false;
      continue;
    }
    first = false;
    out.push_back({j.at("example_id"), j.at("variant"), j.value("truncated_text", j.value("raw_text", ""))});
  }
  return out;
}

void cmd_evaluate(const Globals& g, const std::string& chapters, const std::string& dataset, const std::string& out) {
  const auto cfg = effective_config(g);
  const auto gens = read_generations(chapters);
  const auto examples = read_dataset(dataset);
  if (g.dry_run) return;
  std::map<std::string, const NcpExample*> by_id;
  for (const auto& ex : examples) by_id[ex.id()] = &ex;

  struct Acc {
    std::size_t n = 0, trigram_n = 0;
    double words = 0, unique = 0, unseen = 0, f1 = 0, prec = 0;
    std::map<std::string, double> si;
  };
  std::map<std::string, Acc> per_variant;
  json rows = json::array();
  for (const auto& gen : gens) {
    const auto it = by_id.find(gen.example_id);
    if (it == by_id.end()) throw InvalidArgument("generation for unknown example " + gen.example_id);
    if (metric_words(gen.text).empty()) {
      std::cerr << "warning: empty chapter for " << gen.example_id << " (" << gen.variant << ")\n";
      continue;
    }
    const auto rep = lexical_metrics(gen.text, it->second->story_information, it->second->gold_next_chapter.text);
    auto& a = per_variant[gen.variant];
    ++a.n;
    a.words += static_cast<double>(rep.word_count);
    a.unique += rep.pct_unique_words;
    if (rep.pct_unseen_trigrams) {
      a.unseen += *rep.pct_unseen_trigrams;
      ++a.trigram_n;
    }
    a.f1 += rep.rouge_l_f1;
    a.prec += rep.rouge_l_precision;
    for (const auto& [k, v] : rep.si_element_precision) a.si[k] += v;
    json row = {{"example_id", gen.example_id},
                {"variant", gen.variant},
                {"word_count", rep.word_count},
                {"pct_unique_words", rep.pct_unique_words},
                {"pct_unseen_trigrams", rep.pct_unseen_trigrams ? json(*rep.pct_unseen_trigrams) : json(nullptr)},
                {"rouge_l_f1", rep.rouge_l_f1},
                {"rouge_l_precision", rep.rouge_l_precision},
                {"si_element_precision", rep.si_element_precision}};
    rows.push_back(row);
  }
  json lexical = json::object();
  json si_table = json::object();
  for (const auto& [variant, a] : per_variant) {
    const double n = static_cast<double>(a.n);
    lexical[variant] = {{"n", a.n},
                        {"mean_word_count", a.words / n},
                        {"pct_unique_words", a.unique / n},
                        {"pct_unseen_trigrams", a.trigram_n ? json(a.unseen / static_cast<double>(a.trigram_n)) : json(nullptr)},
                        {"rouge_l_f1", a.f1 / n},
                        {"rouge_l_precision", a.prec / n}};
    json si = json::object();
    for (const auto& [k, v] : a.si) si[k] = v / n;
    si_table[variant] = si;
  }
  json report = {{"header", json::parse(header_for(cfg, "evaluation", "evaluate-v1").to_json_line())},
                 {"lexical", lexical},
                 {"si_element_precision", si_table},
                 {"chapters", rows}};
  emit(out, report.dump(2));
}

// ---- bt-fit ---------------------------------------------------------------

std::vector<PairwiseJudgment> read_judgments(const std::string& path) {
  require_file(path, "--judgments");
  const auto data = read_file(path);
  std::vector<PairwiseJudgment> out;
  const auto trimmed = trim(data);
  if (!trimmed.empty() && trimmed.front() == '{' && data.find("\"judgments\"") != std::string::npos &&
      split_lines(trimmed).size() == 1) {
    // The service's /api/export response body.
    for (const auto& j : json::parse(data).at("judgments")) out.push_back(judgment_from_json(j.dump()));
    return out;
  }
  for (const auto line : split_lines(data)) {
    if (trim(line).empty()) continue;
    const json j = json::parse(line);
    if (j.contains("kind")) continue;
    out.push_back(judgment_from_json(line));
  }
  return out;
}

void cmd_bt_fit(const Globals& g, const std::string& judgments_path, const std::string& dataset, double pseudo,
                const std::string& out) {
  const auto cfg = effective_config(g);
  const auto judgments = read_judgments(judgments_path);
  if (g.dry_run) return;
  BtOptions opts;
  opts.pseudo_count = pseudo;
  json dims = json::object();
  for (Dimension d : kAllDimensions) {
    json entry;
    try {
      const auto bt = bt_fit(judgments, d, opts);
      json pref = json::object();
      for (std::size_t i = 0; i < bt.variants.size(); ++i)
        for (std::size_t j = 0; j < bt.variants.size(); ++j)
          if (i != j) pref[bt.variants[i] + " > " + bt.variants[j]] = bt.preference[i][j];
      entry = {{"strengths", bt.strengths},
               {"log_strengths", bt.log_strengths()},
               {"preference", pref},
               {"iterations", bt.iterations},
               {"converged", bt.converged}};
    } catch (const std::exception& e) {
      entry = {{"error", e.what()}};
    }

    // Agreement over comparisons judged by the most common number (>= 2) of annotators.
    std::map<std::string, std::vector<int>> counts;
    for (const auto& j : judgments)
      if (j.dimension == d) {
        auto& row = counts[j.comparison_id];
        row.resize(3, 0);
        ++row[static_cast<std::size_t>(j.choice)];
      }
    std::map<int, int> raters;
    for (const auto& [id, row] : counts) ++raters[row[0] + row[1] + row[2]];
    int k = 0, best = 0;
    for (const auto& [r, n] : raters)
      if (r >= 2 && n > best) k = r, best = n;
    if (k >= 2) {
      std::vector<std::vector<int>> table;
      for (const auto& [id, row] : counts)
        if (row[0] + row[1] + row[2] == k) table.push_back(row);
      try {
        entry["fleiss_kappa"] = {{"kappa", fleiss_kappa(table)}, {"items", table.size()}, {"raters", k}};
      } catch (const std::exception& e) {
        entry["fleiss_kappa"] = {{"error", e.what()}};
      }
    }
    dims[std::string(to_string(d))] = entry;
  }
  auto rows_json = [](const std::vector<WinRateRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows)
      arr.push_back({{"dimension", std::string(to_string(r.dimension))},
                     {"genre", r.genre},
                     {"variant_a", r.variant_a},
                     {"variant_b", r.variant_b},
                     {"a_wins", r.a_wins},
                     {"b_wins", r.b_wins},
                     {"same", r.same},
                     {"win_rate", r.win_rate}});
    return arr;
  };
  json report = {{"header", json::parse(header_for(cfg, "bt-fit", "bt-fit-v1").to_json_line())},
                 {"judgments", judgments.size()},
                 {"dimensions", dims},
                 {"win_rates", rows_json(win_rates(judgments))}};
  if (!dataset.empty()) {
    std::map<std::string, std::set<Genre>> genres;
    for (const auto& ex : read_dataset(dataset)) genres[ex.id()] = ex.genre_tags;
    report["win_rates_by_genre"] = rows_json(win_rates_by_genre(judgments, genres));
  }
  emit(out, report.dump(2));
}

// ---- serve ----------------------------------------------------------------

void cmd_serve(const Globals& g, int port, const std::string& data_dir, const std::string& static_dir,
               const std::string& import_a, const std::string& import_b, const std::string& dataset, int target) {
  const auto cfg = effective_config(g);
  if (data_dir.empty()) throw config_error("--data-dir", "annotation data directory is required");
  std::vector<ComparisonSpec> specs;
  if (!import_a.empty() || !import_b.empty()) {
    const auto a = read_generations(import_a);
    const auto b = read_generations(import_b);
    std::map<std::string, const NcpExample*> by_id;
    const auto examples = read_dataset(dataset);
    for (const auto& ex : examples) by_id[ex.id()] = &ex;
    std::map<std::string, const Generation*> b_by_id;
    for (const auto& gen : b) b_by_id[gen.example_id] = &gen;
    for (const auto& gen : a) {
      const auto other = b_by_id.find(gen.example_id);
      const auto ex = by_id.find(gen.example_id);
      if (other == b_by_id.end() || ex == by_id.end()) continue;
      specs.push_back({gen.example_id, ex->second->story_information, gen.variant, gen.text, other->second->variant,
                       other->second->text});
    }
  }
  if (g.dry_run) {
    std::cerr << "dry run: " << specs.size() << " comparisons would be imported\n";
    return;
  }
  AnnotationStore store(data_dir);
  if (!specs.empty()) {
    const auto ids = store.add_tasks(specs, cfg.seed, target);
    std::cerr << "imported " << ids.size() << " comparison tasks\n";
  }
  ServerOptions so;
  so.port = port;
  so.static_dir = static_dir;
  AnnotationServer server(store, so);
  std::cerr << "serving annotation API on port " << port << "\n";
  server.run();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vrcli: next-chapter prediction with completion-likelihood rewards"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Pipeline configuration (JSON, ${ENV} interpolation)");
  app.add_option("--seed", g.seed, "Root seed; overrides the config");
  app.add_option("--backend", g.backend, "Model backend: tiny or remote")->check(CLI::IsMember({"tiny", "remote"}));
  app.add_option("--max-inflight", g.max_inflight, "Cap on concurrent backend requests");
  app.add_flag("--dry-run", g.dry_run, "Validate inputs without writing artifacts");
  app.fallthrough();

  std::string out, corpus, data_dir, model, cache, dataset, chapters, checkpoint, judgments, static_dir;
  std::string variant = "base", import_a, import_b;
  int books = 30, port = 8080, target = 1;
  double pseudo = 0.0;

  auto* make = app.add_subcommand("make-corpus", "Write a synthetic corpus directory");
  make->add_option("--out", out)->required();
  make->add_option("--books", books);
  make->callback([&] { cmd_make_corpus(g, out, books); });

  auto* ingest = app.add_subcommand("ingest", "Read a corpus directory and build story-information examples");
  ingest->add_option("--corpus", corpus);
  ingest->add_option("--out-dir", data_dir);
  ingest->callback([&] { cmd_ingest(g, corpus, data_dir); });

  auto* filter = app.add_subcommand("filter", "List eligible chapter indices per book");
  filter->add_option("--books", corpus)->required();
  filter->add_option("--out", out);
  filter->callback([&] { cmd_filter(g, corpus, out); });

  auto* split = app.add_subcommand("split", "Assign books to train/val/test and write split datasets");
  split->add_option("--data-dir", data_dir);
  split->callback([&] { cmd_split(g, data_dir); });

  auto* stats = app.add_subcommand("stats", "Token statistics per story-information element");
  stats->add_option("--dataset", dataset)->required();
  stats->add_option("--out", out);
  stats->callback([&] { cmd_stats(g, dataset, out); });

  auto* fit = app.add_subcommand("fit-lm", "Fit the tiny generator/reference model on the train split");
  fit->add_option("--data-dir", data_dir);
  fit->add_option("--out", out);
  fit->callback([&] { cmd_fit_lm(g, data_dir, out); });

  auto* baseline = app.add_subcommand("baseline", "Score gold chapters without plans and cache the perplexities");
  baseline->add_option("--data-dir", data_dir);
  baseline->add_option("--model", model);
  baseline->add_option("--out", out);
  baseline->callback([&] { cmd_baseline(g, data_dir, model, out); });

  auto* train_cmd = app.add_subcommand("train", "GRPO training of the reasoning policy");
  train_cmd->add_option("--data-dir", data_dir);
  train_cmd->add_option("--model", model);
  train_cmd->add_option("--cache", cache);
  train_cmd->add_option("--out-dir", out);
  train_cmd->callback([&] { cmd_train(g, data_dir, model, cache, out); });

  auto* gen = app.add_subcommand("generate", "Generate next chapters");
  gen->add_option("--variant", variant)->check(CLI::IsMember({"base", "base-reasoning", "rl"}));
  gen->add_option("--checkpoint", checkpoint);
  gen->add_option("--dataset", dataset);
  gen->add_option("--model", model);
  gen->add_option("--out", out);
  gen->callback([&] { cmd_generate(g, variant, checkpoint, dataset, model, out); });

  auto* eval = app.add_subcommand("evaluate", "Lexical metrics and Rouge-L for generated chapters");
  eval->add_option("--chapters", chapters)->required();
  eval->add_option("--dataset", dataset)->required();
  eval->add_option("--out", out);
  eval->callback([&] { cmd_evaluate(g, chapters, dataset, out); });

  auto* bt = app.add_subcommand("bt-fit", "Bradley-Terry strengths, win rates and agreement from judgments");
  bt->add_option("--judgments", judgments)->required();
  bt->add_option("--dataset", dataset, "Dataset for genre breakdowns");
  bt->add_option("--pseudo-count", pseudo);
  bt->add_option("--out", out);
  bt->callback([&] { cmd_bt_fit(g, judgments, dataset, pseudo, out); });

  auto* serve = app.add_subcommand("serve", "Run the pairwise annotation service");
  serve->add_option("--port", port);
  serve->add_option("--data-dir", data_dir)->required();
  serve->add_option("--static", static_dir);
  serve->add_option("--import-a", import_a);
  serve->add_option("--import-b", import_b);
  serve->add_option("--dataset", dataset);
  serve->add_option("--target-judgments", target);
  serve->callback([&] { cmd_serve(g, port, data_dir, static_dir, import_a, import_b, dataset, target); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
