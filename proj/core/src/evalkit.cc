#include "vrcli/evalkit.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <boost/math/distributions/students_t.hpp>

#include "vrcli/errors.h"
#include "vrcli/text.h"

namespace vrcli {

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  const std::size_t m = a.size();
  const std::size_t words = (m + 63) / 64;

  std::unordered_map<std::string_view, std::vector<std::uint64_t>> match;
  for (std::size_t i = 0; i < m; ++i) {
    auto& mask = match[a[i]];
    if (mask.empty()) mask.assign(words, 0);
    mask[i / 64] |= std::uint64_t{1} << (i % 64);
  }

  // Hyyro's row update: V' = (V + (V & M)) | (V & ~M). Zero bits of V mark
  // the LCS contributions.
  std::vector<std::uint64_t> v(words, ~std::uint64_t{0});
  for (const auto& token : b) {
    const auto it = match.find(token);
    if (it == match.end()) continue;
    const auto& mask = it->second;
    std::uint64_t carry = 0;
    for (std::size_t w = 0; w < words; ++w) {
      const std::uint64_t u = v[w] & mask[w];
      const std::uint64_t sum = v[w] + u;
      const std::uint64_t with_carry = sum + carry;
      carry = (sum < v[w]) || (with_carry < sum) ? 1 : 0;
      v[w] = with_carry | (v[w] & ~mask[w]);
    }
  }
  std::size_t zeros = 0;
  for (std::size_t w = 0; w < words; ++w) {
    std::uint64_t bits = ~v[w];
    const std::size_t valid = std::min<std::size_t>(64, m - w * 64);
    if (valid < 64) bits &= (std::uint64_t{1} << valid) - 1;
    zeros += static_cast<std::size_t>(std::popcount(bits));
  }
  return zeros;
}

RougeScore rouge_l_words(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty() || reference.empty()) throw InvalidArgument("rouge_l needs non-empty inputs");
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  RougeScore r;
  r.precision = lcs / static_cast<double>(candidate.size());
  r.recall = lcs / static_cast<double>(reference.size());
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = metric_words(candidate);
  const auto r = metric_words(reference);
  return rouge_l_words(c, r);
}

namespace {

std::string trigram_key(const std::vector<std::string>& w, std::size_t i) {
  return w[i] + '\x1f' + w[i + 1] + '\x1f' + w[i + 2];
}

void add_trigrams(std::string_view text, std::unordered_set<std::string>& out) {
  const auto w = metric_words(text);
  for (std::size_t i = 0; i + 3 <= w.size(); ++i) out.insert(trigram_key(w, i));
}

}  // namespace

LexicalReport lexical_metrics(std::string_view chapter, const StoryInformation& si,
                              std::string_view reference) {
  const auto words = metric_words(chapter);
  if (words.empty()) throw InvalidArgument("lexical metrics need a non-empty chapter");
  LexicalReport rep;
  rep.word_count = words.size();
  const std::unordered_set<std::string> distinct(words.begin(), words.end());
  rep.pct_unique_words = 100.0 * static_cast<double>(distinct.size()) / static_cast<double>(words.size());

  std::string sheets;
  for (const auto& cs : si.character_sheets) sheets += cs.name + "\n" + cs.text + "\n";
  const std::vector<std::pair<std::string, std::string_view>> elements = {
      {"global_sketch", si.global_sketch},
      {"prior_summary", si.prior_summary},
      {"character_sheets", sheets},
      {"previous_chapter", si.previous_chapter},
      {"next_chapter_synopsis", si.next_chapter_synopsis}};

  if (words.size() >= 3) {
    std::unordered_set<std::string> si_trigrams;
    for (const auto& [name, text] : elements) add_trigrams(text, si_trigrams);
    std::size_t unseen = 0;
    const std::size_t total = words.size() - 2;
    for (std::size_t i = 0; i < total; ++i)
      if (!si_trigrams.contains(trigram_key(words, i))) ++unseen;
    rep.pct_unseen_trigrams = 100.0 * static_cast<double>(unseen) / static_cast<double>(total);
  }

  const auto ref = metric_words(reference);
  if (!ref.empty()) {
    const auto r = rouge_l_words(words, ref);
    rep.rouge_l_f1 = r.f1;
    rep.rouge_l_precision = r.precision;
  }
  for (const auto& [name, text] : elements) {
    const auto ew = metric_words(text);
    if (!ew.empty()) rep.si_element_precision[name] = rouge_l_words(words, ew).precision;
  }
  return rep;
}

std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::kPlot: return "plot";
    case Dimension::kCharacter: return "character";
    case Dimension::kCreativity: return "creativity";
    case Dimension::kDevelopment: return "development";
    case Dimension::kLanguage: return "language";
    case Dimension::kOverall: return "overall";
  }
  return "?";
}

std::string_view to_string(Choice c) {
  switch (c) {
    case Choice::kA: return "A";
    case Choice::kB: return "B";
    case Choice::kSame: return "same";
  }
  return "?";
}

Dimension parse_dimension(std::string_view name) {
  for (auto d : kAllDimensions)
    if (to_string(d) == name) return d;
  throw InvalidArgument("unknown dimension '" + std::string(name) + "'");
}

Choice parse_choice(std::string_view name) {
  if (name == "A" || name == "a") return Choice::kA;
  if (name == "B" || name == "b") return Choice::kB;
  if (name == "same") return Choice::kSame;
  throw InvalidArgument("unknown choice '" + std::string(name) + "'");
}

double BtResult::probability(const std::string& a, const std::string& b) const {
  const double sa = strengths.at(a);
  const double sb = strengths.at(b);
  return sa / (sa + sb);
}

std::map<std::string, double> BtResult::log_strengths() const {
  std::map<std::string, double> out;
  for (const auto& [k, s] : strengths) out[k] = std::log(s);
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> components(const std::vector<std::vector<double>>& n) {
  const std::size_t k = n.size();
  std::vector<int> comp(k, -1);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < k; ++s) {
    if (comp[s] >= 0) continue;
    out.emplace_back();
    std::vector<std::size_t> stack = {s};
    comp[s] = static_cast<int>(out.size() - 1);
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      out.back().push_back(u);
      for (std::size_t v = 0; v < k; ++v)
        if (comp[v] < 0 && n[u][v] > 0) {
          comp[v] = comp[s];
          stack.push_back(v);
        }
    }
  }
  return out;
}

bool reaches_all(const std::vector<std::vector<double>>& wins, bool forward) {
  const std::size_t k = wins.size();
  std::vector<bool> seen(k, false);
  std::vector<std::size_t> stack = {0};
  seen[0] = true;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v = 0; v < k; ++v) {
      const double w = forward ? wins[u][v] : wins[v][u];
      if (!seen[v] && w > 0) {
        seen[v] = true;
        stack.push_back(v);
      }
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

}  // namespace

BtResult bt_fit(std::span<const PairwiseJudgment> judgments, const BtOptions& options) {
  if (options.pseudo_count < 0) throw InvalidArgument("pseudo_count must be >= 0");
  std::set<std::string> names;
  for (const auto& j : judgments) {
    if (j.variant_a == j.variant_b) throw InvalidArgument("judgment compares a variant with itself");
    if (j.choice != Choice::kSame) {
      names.insert(j.variant_a);
      names.insert(j.variant_b);
    }
  }
  if (names.empty()) throw InvalidArgument("bt_fit: no decisive judgments (all ties or empty)");

  BtResult res;
  res.variants.assign(names.begin(), names.end());
  const std::size_t k = res.variants.size();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < k; ++i) index[res.variants[i]] = i;

  std::vector<std::vector<double>> wins(k, std::vector<double>(k, 0.0));
  for (const auto& j : judgments) {
    if (j.choice == Choice::kSame) continue;
    const std::size_t a = index[j.variant_a];
    const std::size_t b = index[j.variant_b];
    if (j.choice == Choice::kA) wins[a][b] += 1.0;
    else wins[b][a] += 1.0;
  }
  std::vector<std::vector<double>> games(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) games[i][j] = wins[i][j] + wins[j][i];

  const auto comps = components(games);
  if (comps.size() > 1) {
    std::string msg = "bt_fit: comparison graph is disconnected; components:";
    for (const auto& c : comps) {
      msg += " {";
      for (std::size_t t = 0; t < c.size(); ++t) msg += (t ? ", " : "") + res.variants[c[t]];
      msg += "}";
    }
    throw InvalidArgument(msg);
  }
  if (options.pseudo_count > 0) {
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (i != j && games[i][j] > 0) wins[i][j] += options.pseudo_count;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) games[i][j] = wins[i][j] + wins[j][i];
  } else if (k > 1 && !(reaches_all(wins, true) && reaches_all(wins, false))) {
    throw UndefinedResult(
        "bt_fit: no finite maximum-likelihood strengths (some variant group never loses or never "
        "wins against the rest); set pseudo_count to regularize");
  }

  std::vector<double> s(k, 1.0);
  std::vector<double> total_wins(k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    total_wins[i] = std::accumulate(wins[i].begin(), wins[i].end(), 0.0);

  if (k == 1) {
    res.converged = true;
  }
  for (int it = 1; it <= options.max_iterations && k > 1; ++it) {
    std::vector<double> next(k);
    for (std::size_t i = 0; i < k; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < k; ++j)
        if (j != i && games[i][j] > 0) denom += games[i][j] / (s[i] + s[j]);
      next[i] = total_wins[i] / denom;
    }
    double log_mean = 0.0;
    for (double x : next) log_mean += std::log(x);
    const double scale = std::exp(log_mean / static_cast<double>(k));
    double change = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      next[i] /= scale;
      change = std::max(change, std::abs(next[i] - s[i]) / s[i]);
    }
    s = std::move(next);
    res.iterations = it;
    if (change < options.tolerance) {
      res.converged = true;
      break;
    }
  }

  res.preference.assign(k, std::vector<double>(k, 0.5));
  for (std::size_t i = 0; i < k; ++i) {
    res.strengths[res.variants[i]] = s[i];
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) res.preference[i][j] = s[i] / (s[i] + s[j]);
  }
  return res;
}

BtResult bt_fit(std::span<const PairwiseJudgment> judgments, Dimension dimension,
                const BtOptions& options) {
  std::vector<PairwiseJudgment> subset;
  for (const auto& j : judgments)
    if (j.dimension == dimension) subset.push_back(j);
  return bt_fit(subset, options);
}

namespace {

void tally(std::vector<WinRateRow>& rows, std::map<std::tuple<Dimension, std::string, std::string, std::string>, std::size_t>& where,
           const PairwiseJudgment& j, const std::string& genre) {
  const auto& lo = std::min(j.variant_a, j.variant_b);
  const auto& hi = std::max(j.variant_a, j.variant_b);
  const auto key = std::make_tuple(j.dimension, genre, lo, hi);
  auto it = where.find(key);
  if (it == where.end()) {
    WinRateRow row;
    row.dimension = j.dimension;
    row.genre = genre;
    row.variant_a = j.variant_a;
    row.variant_b = j.variant_b;
    rows.push_back(row);
    it = where.emplace(key, rows.size() - 1).first;
  }
  WinRateRow& row = rows[it->second];
  const bool flipped = row.variant_a != j.variant_a;
  if (j.choice == Choice::kSame) ++row.same;
  else if ((j.choice == Choice::kA) != flipped) ++row.a_wins;
  else ++row.b_wins;
}

void finish(std::vector<WinRateRow>& rows) {
  for (auto& r : rows) {
    const int total = r.a_wins + r.b_wins + r.same;
    r.win_rate = total > 0 ? 100.0 * r.a_wins / total : 0.0;
  }
}

}  // namespace

std::vector<WinRateRow> win_rates(std::span<const PairwiseJudgment> judgments) {
  std::vector<WinRateRow> rows;
  std::map<std::tuple<Dimension, std::string, std::string, std::string>, std::size_t> where;
  for (const auto& j : judgments) tally(rows, where, j, "");
  finish(rows);
  return rows;
}

std::vector<WinRateRow> win_rates_by_genre(std::span<const PairwiseJudgment> judgments,
                                           const std::map<std::string, std::set<Genre>>& genres) {
  std::vector<WinRateRow> rows;
  std::map<std::tuple<Dimension, std::string, std::string, std::string>, std::size_t> where;
  for (const auto& j : judgments) {
    const auto it = genres.find(j.example_id);
    if (it == genres.end()) continue;
    for (Genre g : it->second) tally(rows, where, j, std::string(to_string(g)));
  }
  finish(rows);
  return rows;
}

double fleiss_kappa(const std::vector<std::vector<int>>& table) {
  if (table.empty()) throw InvalidArgument("fleiss_kappa needs at least one item");
  const std::size_t cats = table[0].size();
  if (cats == 0) throw InvalidArgument("fleiss_kappa needs at least one category");
  long k = -1;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].size() != cats) throw InvalidArgument("fleiss_kappa rows differ in width");
    long sum = 0;
    for (int c : table[i]) {
      if (c < 0) throw InvalidArgument("fleiss_kappa counts must be non-negative");
      sum += c;
    }
    if (k < 0) k = sum;
    if (sum != k)
      throw InvalidArgument("fleiss_kappa row " + std::to_string(i) + " sums to " +
                            std::to_string(sum) + ", expected " + std::to_string(k));
  }
  if (k < 2) throw InvalidArgument("fleiss_kappa needs at least 2 raters per item");

  const double n = static_cast<double>(table.size());
  const double kk = static_cast<double>(k);
  double p_bar = 0.0;
  std::vector<double> col(cats, 0.0);
  for (const auto& row : table) {
    double sq = 0.0;
    for (std::size_t j = 0; j < cats; ++j) {
      sq += static_cast<double>(row[j]) * row[j];
      col[j] += row[j];
    }
    p_bar += (sq - kk) / (kk * (kk - 1.0));
  }
  p_bar /= n;
  double p_e = 0.0;
  for (double c : col) {
    const double p = c / (n * kk);
    p_e += p * p;
  }
  if (p_e >= 1.0) throw UndefinedResult("fleiss_kappa undefined: expected agreement is 1");
  return (p_bar - p_e) / (1.0 - p_e);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("spearman inputs differ in length");
  if (x.size() < 3) throw InvalidArgument("spearman needs at least 3 pairs");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedResult("spearman undefined for constant input");
  SpearmanResult out;
  out.n = x.size();
  out.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = n - 2.0;
  if (std::abs(out.rho) >= 1.0) {
    out.p_value = 0.0;
  } else {
    const double t = out.rho * std::sqrt(dof / (1.0 - out.rho * out.rho));
    const boost::math::students_t dist(dof);
    out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return out;
}

}  // namespace vrcli
