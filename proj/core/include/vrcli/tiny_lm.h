#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vrcli/lm.h"
#include "vrcli/rng.h"

namespace vrcli {

// Log-linear n-gram model: one logit per (context, symbol), conditional
// distributions are the softmax over the vocabulary. Contexts are the previous
// order-1 symbol ids, left-padded with kBos. Contexts absent from the table
// have all-zero logits (uniform). Tokenization is whitespace splitting over a
// closed vocabulary; unknown words map to "<unk>".
//
// Concurrent reads are safe; mutation requires exclusive access.
class TinyLmPolicy {
 public:
  using Context = std::vector<int>;
  using Table = std::map<Context, std::vector<double>>;

  static constexpr int kBos = -1;
  static constexpr std::string_view kUnknownSymbol = "<unk>";
  static constexpr std::string_view kEndSymbol = "</s>";

  // "<unk>" is appended if the vocabulary lacks it. Symbols must be unique
  // and contain no whitespace.
  explicit TinyLmPolicy(std::vector<std::string> vocabulary, int order = 2);

  struct FitOptions {
    int order = 2;
    std::size_t max_vocab = 1000;
    double smoothing = 0.5;
    bool include_end_symbol = true;
  };
  // Count-based initialisation: logit = log(1 + count / smoothing), so the
  // conditional is the add-smoothing estimate and unseen contexts stay uniform.
  static TinyLmPolicy fit(std::span<const std::string> texts, const FitOptions& options);

  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  std::size_t vocab_size() const { return vocabulary_.size(); }
  int order() const { return order_; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  int unknown_id() const { return unknown_id_; }
  // -1 when the vocabulary has no end symbol.
  int end_id() const { return end_id_; }
  int symbol_id(std::string_view symbol) const;
  const std::string& symbol(int id) const { return vocabulary_.at(static_cast<std::size_t>(id)); }

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;
  // Context for predicting tokens[pos].
  Context context_before(std::span<const int> tokens, std::size_t pos) const;

  std::vector<double> logits(const Context& context) const;
  std::vector<double> probabilities(const Context& context, double temperature = 1.0) const;
  std::vector<double> log_probabilities(const Context& context) const;

  // Throw InvalidArgument on frozen policies or size mismatch.
  void set_logits(const Context& context, std::vector<double> values);
  void add_scaled(const Table& delta, double scale);

  const Table& table() const { return table_; }

  std::string serialize() const;
  static TinyLmPolicy deserialize(std::string_view data);

  bool operator==(const TinyLmPolicy& other) const;

 private:
  void require_mutable() const;

  std::vector<std::string> vocabulary_;
  std::unordered_map<std::string, int> index_;
  int order_;
  int unknown_id_ = -1;
  int end_id_ = -1;
  bool frozen_ = false;
  Table table_;
};

using GradientTable = TinyLmPolicy::Table;

// Total log-likelihood gradient of `completion` given `prompt`:
//   d/dw[c,s] = count(s emitted at c) - sum over visits of c of pi(s|c).
// Contexts never visited are absent (exactly zero). Throws on frozen policies.
GradientTable tiny_grad_logprob(const TinyLmPolicy& policy, std::string_view prompt,
                                std::string_view completion);
void accumulate_grad_logprob(const TinyLmPolicy& policy, std::span<const int> prompt_ids,
                             std::span<const int> completion_ids, double weight,
                             GradientTable& out);

// Exact KL(policy || reference) at each context. Throws on vocabulary mismatch.
std::vector<double> tiny_kl(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                            std::span<const TinyLmPolicy::Context> contexts);
double tiny_kl_at(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                  const TinyLmPolicy::Context& context);
// Adds weight * dKL(policy||reference)/dw at `context` into `out`.
void accumulate_grad_kl(const TinyLmPolicy& policy, const TinyLmPolicy& reference,
                        const TinyLmPolicy::Context& context, double weight, GradientTable& out);

ScoredCompletion tiny_score(const TinyLmPolicy& policy, std::string_view prompt,
                            std::string_view completion);

// Samples completion ids. Honors temperature, top_k, top_p, min/max tokens and
// the end symbol; stop markers are handled by TinyLmBackend::sample.
std::vector<int> tiny_sample_ids(const TinyLmPolicy& policy, std::span<const int> prompt_ids,
                                 const SamplingParams& params, Rng& rng);

class TinyLmBackend final : public LanguageModel {
 public:
  TinyLmBackend(std::shared_ptr<const TinyLmPolicy> policy, std::string name = "tiny");

  BackendKind kind() const override { return BackendKind::kTiny; }
  std::string identity() const override;
  ScoredCompletion score(std::string_view prompt, std::string_view completion) const override;
  // Without params.seed a fixed default seed is used, so output is reproducible.
  std::string sample(std::string_view prompt, const SamplingParams& params) const override;
  std::size_t count_tokens(std::string_view text) const override;

  const TinyLmPolicy& policy() const { return *policy_; }
  std::shared_ptr<const TinyLmPolicy> policy_ptr() const { return policy_; }

 private:
  std::shared_ptr<const TinyLmPolicy> policy_;
  std::string name_;
};

}  // namespace vrcli
