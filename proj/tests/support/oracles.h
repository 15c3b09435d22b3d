#pragma once

// Test-side reference implementations. Each one is written from the defining
// formula, deliberately slow and without sharing code with the library, so a
// bug in the library cannot hide behind the same bug in the check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vrcli/corpus.h"
#include "vrcli/grpo.h"
#include "vrcli/rng.h"
#include "vrcli/tiny_lm.h"

namespace vrcli::oracle {

inline std::vector<double> softmax(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

inline std::vector<int> context_of(const std::vector<int>& ids, std::size_t pos, int order) {
  std::vector<int> ctx;
  for (int back = order - 1; back >= 1; --back) {
    const long at = static_cast<long>(pos) - back;
    ctx.push_back(at >= 0 ? ids[static_cast<std::size_t>(at)] : TinyLmPolicy::kBos);
  }
  return ctx;
}

// The token-averaged GRPO surrogate, computed directly from the logit table.
inline double grpo_surrogate(const TinyLmPolicy& pi, const TinyLmPolicy& ref,
                             const std::vector<GroupRollout>& groups, double beta) {
  double total = 0.0;
  for (const auto& g : groups) {
    const auto prompt = pi.encode(g.prompt);
    for (std::size_t j = 0; j < g.traces.size(); ++j) {
      const auto trace = pi.encode(g.traces[j]);
      if (trace.empty()) continue;
      std::vector<int> all = prompt;
      all.insert(all.end(), trace.begin(), trace.end());
      double sum = 0.0;
      for (std::size_t pos = prompt.size(); pos < all.size(); ++pos) {
        const auto ctx = context_of(all, pos, pi.order());
        const auto p = softmax(pi.logits(ctx));
        const auto q = softmax(ref.logits(ctx));
        sum += g.advantages[j] * std::log(p[static_cast<std::size_t>(all[pos])]) - beta * kl(p, q);
      }
      total += sum / static_cast<double>(trace.size()) / static_cast<double>(g.traces.size());
    }
  }
  return total / static_cast<double>(groups.size());
}

// Central finite difference of f with respect to one logit.
template <typename F>
double central_difference(TinyLmPolicy& policy, const TinyLmPolicy::Context& ctx, std::size_t sym, double h,
                          F&& f) {
  auto row = policy.logits(ctx);
  const double w = row[sym];
  row[sym] = w + h;
  policy.set_logits(ctx, row);
  const double up = f();
  row[sym] = w - h;
  policy.set_logits(ctx, row);
  const double down = f();
  row[sym] = w;
  policy.set_logits(ctx, row);
  return (up - down) / (2.0 * h);
}

inline std::size_t lcs_dp(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
  return t[a.size()][b.size()];
}

struct Prf {
  double p, r, f;
};
inline Prf rouge_l_dp(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  const double l = static_cast<double>(lcs_dp(cand, ref));
  const double p = l / static_cast<double>(cand.size());
  const double r = l / static_cast<double>(ref.size());
  return {p, r, p + r > 0 ? 2 * p * r / (p + r) : 0.0};
}

// Rank by counting: 1 + (number smaller) + (ties - 1) / 2.
inline std::vector<double> ranks_by_counting(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : v) {
      if (x < v[i]) ++less;
      if (x == v[i]) ++equal;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Eligibility written from the 1-based chapter rule: the chapter being
// predicted is chapter k+1 with 2 < k < n - 2.
inline std::vector<int> eligible_indices(const BookRecord& b) {
  std::vector<int> out;
  const int n = static_cast<int>(b.chapters.size());
  for (int k = 1; k <= n; ++k) {
    if (!(k > 2 && k < n - 2)) continue;
    const auto& next = b.chapters[static_cast<std::size_t>(k)];
    const auto& cur = b.chapters[static_cast<std::size_t>(k - 1)];
    if (next.word_count < 200 || next.word_count > 5000) continue;
    if (cur.word_count > 5000) continue;
    out.push_back(k - 1);
  }
  return out;
}

inline double piecewise_table(double i) {
  if (i >= 2.0) return 1.0;
  if (i >= 1.0) return 0.9;
  if (i >= 0.05) return 0.5;
  return 0.0;
}

// Does any assignment of the books to (train, val, test) with the given counts
// satisfy every predicate in every non-empty split? Plain enumeration.
inline bool split_feasible(const std::vector<BookRecord>& books, const SplitCounts& counts) {
  const std::size_t n = books.size();
  std::vector<int> a(n, 0);
  std::size_t combos = 1;
  for (std::size_t i = 0; i < n; ++i) combos *= 3;
  for (std::size_t code = 0; code < combos; ++code) {
    std::size_t c = code;
    int cnt[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(c % 3);
      c /= 3;
      ++cnt[a[i]];
    }
    if (cnt[0] != counts.train || cnt[1] != counts.val || cnt[2] != counts.test) continue;
    bool ok = true;
    for (int s = 0; s < 3 && ok; ++s) {
      if (cnt[s] == 0) continue;
      for (auto p : kAllSplitPredicates) {
        bool any = false;
        for (std::size_t i = 0; i < n; ++i)
          if (a[i] == s && satisfies(books[i], p)) any = true;
        if (!any) {
          ok = false;
          break;
        }
      }
    }
    if (ok) return true;
  }
  return false;
}

// A random policy over `v` symbols with a few random contexts populated.
inline TinyLmPolicy random_policy(Rng& rng, int v, int order, int contexts, double scale = 1.5) {
  std::vector<std::string> vocab;
  for (int i = 0; i < v - 1; ++i) vocab.push_back("s" + std::to_string(i));
  TinyLmPolicy p(vocab, order);
  const int size = static_cast<int>(p.vocab_size());
  for (int c = 0; c < contexts; ++c) {
    TinyLmPolicy::Context ctx;
    for (int k = 0; k < order - 1; ++k) ctx.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(size + 1))) - 1);
    std::vector<double> row(static_cast<std::size_t>(size));
    for (auto& x : row) x = (rng.uniform() * 2 - 1) * scale;
    p.set_logits(ctx, row);
  }
  return p;
}

inline std::string random_words(Rng& rng, const std::vector<std::string>& vocab, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += vocab[rng.below(vocab.size())];
  }
  return out;
}

}  // namespace vrcli::oracle
