#include "vrcli/tiny_lm.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "vrcli/errors.h"
#include "vrcli/text.h"

namespace vrcli {
namespace {

constexpr std::string_view kMagic = "vrcli-tinylm";
constexpr int kFormatVersion = 1;

void log_softmax_inplace(std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - mx);
  const double lz = mx + std::log(z);
  for (double& x : v) x -= lz;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

TinyLmPolicy::TinyLmPolicy(std::vector<std::string> vocabulary, int order)
    : vocabulary_(std::move(vocabulary)), order_(order) {
  if (order_ < 1) throw InvalidArgument("tiny LM order must be >= 1");
  if (std::find(vocabulary_.begin(), vocabulary_.end(), kUnknownSymbol) == vocabulary_.end())
    vocabulary_.emplace_back(kUnknownSymbol);
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    const auto& sym = vocabulary_[i];
    if (sym.empty() || split_words(sym).size() != 1 || split_words(sym)[0].size() != sym.size())
      throw InvalidArgument("vocabulary symbol '" + sym + "' is empty or contains whitespace");
    if (!index_.emplace(sym, static_cast<int>(i)).second)
      throw InvalidArgument("duplicate vocabulary symbol '" + sym + "'");
  }
  unknown_id_ = index_.at(std::string(kUnknownSymbol));
  if (auto it = index_.find(std::string(kEndSymbol)); it != index_.end()) end_id_ = it->second;
}

TinyLmPolicy TinyLmPolicy::fit(std::span<const std::string> texts, const FitOptions& options) {
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& text : texts)
    for (std::string_view w : split_words(text)) ++freq[std::string(w)];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> vocab = {std::string(kUnknownSymbol)};
  if (options.include_end_symbol) vocab.emplace_back(kEndSymbol);
  for (const auto& [word, count] : ranked) {
    if (vocab.size() >= options.max_vocab) break;
    if (word == kUnknownSymbol || word == kEndSymbol) continue;
    vocab.push_back(word);
  }
  TinyLmPolicy lm(std::move(vocab), options.order);

  std::map<Context, std::vector<double>> counts;
  for (const auto& text : texts) {
    std::vector<int> ids = lm.encode(text);
    if (lm.end_id_ >= 0) ids.push_back(lm.end_id_);
    for (std::size_t pos = 0; pos < ids.size(); ++pos) {
      auto& row = counts[lm.context_before(ids, pos)];
      if (row.empty()) row.assign(lm.vocab_size(), 0.0);
      row[static_cast<std::size_t>(ids[pos])] += 1.0;
    }
  }
  for (auto& [ctx, row] : counts) {
    for (double& c : row) c = std::log1p(c / options.smoothing);
    lm.table_.emplace(ctx, std::move(row));
  }
  return lm;
}

int TinyLmPolicy::symbol_id(std::string_view symbol) const {
  const auto it = index_.find(std::string(symbol));
  return it == index_.end() ? unknown_id_ : it->second;
}

std::vector<int> TinyLmPolicy::encode(std::string_view text) const {
  std::vector<int> ids;
  for (std::string_view w : split_words(text)) ids.push_back(symbol_id(w));
  return ids;
}

std::string TinyLmPolicy::decode(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += symbol(ids[i]);
  }
  return out;
}

TinyLmPolicy::Context TinyLmPolicy::context_before(std::span<const int> tokens,
                                                   std::size_t pos) const {
  Context ctx(static_cast<std::size_t>(order_ - 1), kBos);
  for (std::size_t k = 0; k < ctx.size(); ++k) {
    // ctx[last] is the token immediately preceding pos.
    const std::size_t back = ctx.size() - k;
    if (pos >= back) ctx[k] = tokens[pos - back];
  }
  return ctx;
}

std::vector<double> TinyLmPolicy::logits(const Context& context) const {
  const auto it = table_.find(context);
  if (it == table_.end()) return std::vector<double>(vocab_size(), 0.0);
  return it->second;
}

std::vector<double> TinyLmPolicy::log_probabilities(const Context& context) const {
  std::vector<double> v = logits(context);
  log_softmax_inplace(v);
  return v;
}

std::vector<double> TinyLmPolicy::probabilities(const Context& context, double temperature) const {
  std::vector<double> v = logits(context);
  for (double& x : v) x /= temperature;
  log_softmax_inplace(v);
  for (double& x : v) x = std::exp(x);
  return v;
}

void TinyLmPolicy::require_mutable() const {
  if (frozen_) throw InvalidArgument("tiny LM policy is frozen; updates rejected");
}

void TinyLmPolicy::set_logits(const Context& context, std::vector<double> values) {
  require_mutable();
  if (values.size() != vocab_size()) throw InvalidArgument("logit row size mismatch");
  if (context.size() != static_cast<std::size_t>(order_ - 1))
    throw InvalidArgument("context length mismatch");
  table_[context] = std::move(values);
}

void TinyLmPolicy::add_scaled(const Table& delta, double scale) {
  require_mutable();
  for (const auto& [ctx, row] : delta) {
    if (row.size() != vocab_size()) throw InvalidArgument("gradient row size mismatch");
    auto it = table_.find(ctx);
    if (it == table_.end()) it = table_.emplace(ctx, std::vector<double>(vocab_size(), 0.0)).first;
    for (std::size_t s = 0; s < row.size(); ++s) it->second[s] += scale * row[s];
  }
}

std::string TinyLmPolicy::serialize() const {
  std::string out;
  out += std::string(kMagic) + " " + std::to_string(kFormatVersion) + "\n";
  out += "order " + std::to_string(order_) + "\n";
  out += "frozen " + std::to_string(frozen_ ? 1 : 0) + "\n";
  out += "vocab " + std::to_string(vocab_size()) + "\n";
  for (const auto& sym : vocabulary_) out += sym + "\n";
  out += "contexts " + std::to_string(table_.size()) + "\n";
  for (const auto& [ctx, row] : table_) {
    for (int id : ctx) out += std::to_string(id) + " ";
    out += "|";
    for (double w : row) out += " " + format_double(w);
    out += "\n";
  }
  return out;
}

TinyLmPolicy TinyLmPolicy::deserialize(std::string_view data) {
  std::istringstream in{std::string(data)};
  auto fail = [](const std::string& why) -> TinyLmPolicy {
    throw InvalidArgument("malformed tiny LM file: " + why);
  };
  std::string magic, key;
  int version = 0, order = 0, frozen = 0;
  std::size_t nvocab = 0, nctx = 0;
  if (!(in >> magic >> version) || magic != kMagic) return fail("bad header");
  if (version != kFormatVersion) return fail("unsupported version " + std::to_string(version));
  if (!(in >> key >> order) || key != "order") return fail("missing order");
  if (!(in >> key >> frozen) || key != "frozen") return fail("missing frozen flag");
  if (!(in >> key >> nvocab) || key != "vocab") return fail("missing vocab");
  std::vector<std::string> vocab(nvocab);
  for (auto& sym : vocab)
    if (!(in >> sym)) return fail("truncated vocabulary");
  TinyLmPolicy lm(std::move(vocab), order);
  if (lm.vocab_size() != nvocab) return fail("vocabulary lacks <unk>");
  if (!(in >> key >> nctx) || key != "contexts") return fail("missing contexts");
  for (std::size_t c = 0; c < nctx; ++c) {
    Context ctx(static_cast<std::size_t>(order - 1));
    for (int& id : ctx)
      if (!(in >> id)) return fail("truncated context");
    std::string bar;
    if (!(in >> bar) || bar != "|") return fail("missing separator");
    std::vector<double> row(nvocab);
    for (double& w : row) {
      std::string tok;
      if (!(in >> tok)) return fail("truncated row");
      w = std::strtod(tok.c_str(), nullptr);
    }
    lm.table_.emplace(std::move(ctx), std::move(row));
  }
  lm.frozen_ = frozen != 0;
  return lm;
}

bool TinyLmPolicy::operator==(const TinyLmPolicy& other) const {
  return vocabulary_ == other.vocabulary_ && order_ == other.order_ && frozen_ == other.frozen_ &&
         table_ == other.table_;
}

void accumulate_grad_logprob(const TinyLmPolicy& policy, std::span<const int> prompt_ids,
                             std::span<const int> completion_ids, double weight,
                             GradientTable& out) {
  std::vector<int> all(prompt_ids.begin(), prompt_ids.end());
  all.insert(all.end(), completion_ids.begin(), completion_ids.end());
  for (std::size_t pos = prompt_ids.size(); pos < all.size(); ++pos) {
    const auto ctx = policy.context_before(all, pos);
    const auto probs = policy.probabilities(ctx);
    auto& row = out[ctx];
    if (row.empty()) row.assign(policy.vocab_size(), 0.0);
    row[static_cast<std::size_t>(all[pos])] += weight;
    for (std::size_t s = 0; s < probs.size(); ++s) row[s] -= weight * probs[s];
  }
}

GradientTable tiny_grad_logprob(const TinyLmPolicy& policy, std::string_view prompt,
                                std::string_view completion) {
  if (policy.frozen()) throw InvalidArgument("tiny LM policy is frozen; no gradient");
  GradientTable out;
  accumulate_grad_logprob(policy, policy.encode(prompt), policy.encode(completion), 1.0, out);
  return out;
}

double tiny_kl_at(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                  const TinyLmPolicy::Context& context) {
  if (policy.vocabulary() != reference.vocabulary())
    throw InvalidArgument("KL requires identical vocabularies");
  const auto lp = policy.log_probabilities(context);
  const auto lq = reference.log_probabilities(context);
  double kl = 0.0;
  for (std::size_t s = 0; s < lp.size(); ++s) kl += std::exp(lp[s]) * (lp[s] - lq[s]);
  return std::max(kl, 0.0);
}

std::vector<double> tiny_kl(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                            std::span<const TinyLmPolicy::Context> contexts) {
  std::vector<double> out;
  out.reserve(contexts.size());
  for (const auto& ctx : contexts) out.push_back(tiny_kl_at(policy, reference, ctx));
  return out;
}

void accumulate_grad_kl(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                        const TinyLmPolicy::Context& context, double weight, GradientTable& out) {
  if (policy.vocabulary() != reference.vocabulary())
    throw InvalidArgument("KL requires identical vocabularies");
  const auto lp = policy.log_probabilities(context);
  const auto lq = reference.log_probabilities(context);
  double kl = 0.0;
  for (std::size_t s = 0; s < lp.size(); ++s) kl += std::exp(lp[s]) * (lp[s] - lq[s]);
  auto& row = out[context];
  if (row.empty()) row.assign(policy.vocab_size(), 0.0);
  for (std::size_t s = 0; s < lp.size(); ++s)
    row[s] += weight * std::exp(lp[s]) * (lp[s] - lq[s] - kl);
}

ScoredCompletion tiny_score(const TinyLmPolicy& policy, std::string_view prompt,
                            std::string_view completion) {
  const auto completion_ids = policy.encode(completion);
  if (completion_ids.empty()) throw InvalidArgument("cannot score an empty completion");
  std::vector<int> all = policy.encode(prompt);
  const std::size_t start = all.size();
  all.insert(all.end(), completion_ids.begin(), completion_ids.end());
  ScoredCompletion scored;
  scored.token_logprobs.reserve(completion_ids.size());
  for (std::size_t pos = start; pos < all.size(); ++pos) {
    const auto lp = policy.log_probabilities(policy.context_before(all, pos));
    scored.token_logprobs.push_back(lp[static_cast<std::size_t>(all[pos])]);
  }
  return scored;
}

std::vector<int> tiny_sample_ids(const TinyLmPolicy& policy, std::span<const int> prompt_ids,
                                 const SamplingParams& params, Rng& rng) {
  params.validate();
  std::vector<int> all(prompt_ids.begin(), prompt_ids.end());
  std::vector<int> out;
  const int end_id = policy.end_id();
  std::vector<std::size_t> order(policy.vocab_size());
  while (static_cast<int>(out.size()) < params.max_tokens) {
    auto probs = policy.probabilities(policy.context_before(all, all.size()), params.temperature);
    if (end_id >= 0 && static_cast<int>(out.size()) < params.min_tokens)
      probs[static_cast<std::size_t>(end_id)] = 0.0;

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    std::size_t keep = order.size();
    if (params.top_k > 0) keep = std::min(keep, static_cast<std::size_t>(params.top_k));
    if (params.top_p < 1.0) {
      double total = 0.0;
      for (std::size_t r = 0; r < keep; ++r) total += probs[order[r]];
      double cum = 0.0;
      for (std::size_t r = 0; r < keep; ++r) {
        cum += probs[order[r]];
        if (cum >= params.top_p * total) {
          keep = r + 1;
          break;
        }
      }
    }
    double mass = 0.0;
    for (std::size_t r = 0; r < keep; ++r) mass += probs[order[r]];
    int chosen = static_cast<int>(order[0]);
    if (mass > 0.0) {
      const double u = rng.uniform() * mass;
      double cum = 0.0;
      for (std::size_t r = 0; r < keep; ++r) {
        cum += probs[order[r]];
        if (u < cum) {
          chosen = static_cast<int>(order[r]);
          break;
        }
        chosen = static_cast<int>(order[r]);
      }
    }
    if (chosen == end_id) break;
    out.push_back(chosen);
    all.push_back(chosen);
  }
  return out;
}

TinyLmBackend::TinyLmBackend(std::shared_ptr<const TinyLmPolicy> policy, std::string name)
    : policy_(std::move(policy)), name_(std::move(name)) {
  if (!policy_) throw InvalidArgument("tiny backend needs a policy");
}

std::string TinyLmBackend::identity() const {
  return "tiny:" + name_ + ":" + hex64(fnv1a64(policy_->serialize()));
}

ScoredCompletion TinyLmBackend::score(std::string_view prompt, std::string_view completion) const {
  return tiny_score(*policy_, prompt, completion);
}

std::string TinyLmBackend::sample(std::string_view prompt, const SamplingParams& params) const {
  Rng rng(params.seed.value_or(0x5eed));
  const auto ids = tiny_sample_ids(*policy_, policy_->encode(prompt), params, rng);
  if (params.stop_markers.empty()) return policy_->decode(ids);
  // Stop at the first token boundary where the text ends with a marker.
  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) text.push_back(' ');
    text += policy_->symbol(ids[i]);
    if (static_cast<int>(i + 1) < params.min_tokens) continue;
    for (const auto& marker : params.stop_markers) {
      if (!marker.empty() && text.ends_with(marker)) {
        text.resize(text.size() - marker.size());
        return std::string(trim(text));
      }
    }
  }
  return text;
}

std::size_t TinyLmBackend::count_tokens(std::string_view text) const {
  return policy_->encode(text).size();
}

}  // namespace vrcli
