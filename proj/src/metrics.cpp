#include "ris/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include "ris/common.hpp"

namespace ris {

PRF make_prf(double p, double r) {
  PRF out;
  out.precision = p;
  out.recall = r;
  out.f1 = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
  return out;
}

std::vector<Tokens> split_sentences(const Tokens& tokens,
                                    const std::string& period) {
  std::vector<Tokens> sents;
  Tokens cur;
  for (const auto& t : tokens) {
    if (t == period) {
      if (!cur.empty()) sents.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(t);
    }
  }
  if (!cur.empty()) sents.push_back(std::move(cur));
  return sents;
}

int lcs_length(const Tokens& a, const Tokens& b) {
  const std::size_t m = a.size(), n = b.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      if (a[i - 1] == b[j - 1]) cur[j] = prev[j - 1] + 1;
      else cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

namespace {

// Positions of the reference sentence matched by one LCS alignment against
// the candidate sentence. Backtrace prefers the candidate-side move on ties,
// which is deterministic.
std::vector<int> lcs_ref_positions(const Tokens& cand, const Tokens& ref) {
  const std::size_t m = cand.size(), n = ref.size();
  std::vector<std::vector<int>> dp(m + 1, std::vector<int>(n + 1, 0));
  for (std::size_t i = 1; i <= m; ++i)
    for (std::size_t j = 1; j <= n; ++j)
      dp[i][j] = cand[i - 1] == ref[j - 1]
                     ? dp[i - 1][j - 1] + 1
                     : std::max(dp[i - 1][j], dp[i][j - 1]);
  std::vector<int> pos;
  std::size_t i = m, j = n;
  while (i > 0 && j > 0) {
    if (cand[i - 1] == ref[j - 1]) {
      pos.push_back(static_cast<int>(j - 1));
      --i;
      --j;
    } else if (dp[i - 1][j] >= dp[i][j - 1]) {
      --i;
    } else {
      --j;
    }
  }
  return pos;
}

std::map<Tokens, long long> ngram_counts(const Tokens& t, int n) {
  std::map<Tokens, long long> counts;
  if (static_cast<int>(t.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i)
    ++counts[Tokens(t.begin() + i, t.begin() + i + n)];
  return counts;
}

}  // namespace

PRF rouge_n(const Tokens& candidate, const Tokens& reference, int n) {
  RIS_VALIDATE(n >= 1, "rouge_n: n must be >= 1, got " << n);
  if (candidate.empty() || reference.empty()) {
    std::cerr << "[warn] rouge_n: empty candidate or reference\n";
    return PRF{};
  }
  const auto cc = ngram_counts(candidate, n);
  const auto rc = ngram_counts(reference, n);
  long long overlap = 0, ctotal = 0, rtotal = 0;
  for (const auto& [g, c] : cc) {
    ctotal += c;
    auto it = rc.find(g);
    if (it != rc.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [g, c] : rc) rtotal += c;
  if (ctotal == 0 || rtotal == 0) return PRF{};
  return make_prf(static_cast<double>(overlap) / ctotal,
                  static_cast<double>(overlap) / rtotal);
}

PRF rouge_l(const Tokens& candidate, const Tokens& reference,
            const std::string& period) {
  if (candidate.empty() || reference.empty()) {
    std::cerr << "[warn] rouge_l: empty candidate or reference\n";
    return PRF{};
  }
  const auto cand_sents = split_sentences(candidate, period);
  const auto ref_sents = split_sentences(reference, period);
  long long cand_len = 0, ref_len = 0;
  std::map<std::string, long long> cand_budget, ref_budget;
  for (const auto& s : cand_sents) {
    cand_len += static_cast<long long>(s.size());
    for (const auto& t : s) ++cand_budget[t];
  }
  for (const auto& s : ref_sents) {
    ref_len += static_cast<long long>(s.size());
    for (const auto& t : s) ++ref_budget[t];
  }
  if (cand_len == 0 || ref_len == 0) return PRF{};
  // Union LCS per reference sentence, with hits clipped by the remaining
  // token budgets on both sides so shared candidate tokens are not counted
  // against several reference sentences.
  long long hits = 0;
  for (const auto& r : ref_sents) {
    std::set<int> matched;
    for (const auto& c : cand_sents)
      for (int p : lcs_ref_positions(c, r)) matched.insert(p);
    for (int p : matched) {
      const std::string& tok = r[static_cast<std::size_t>(p)];
      auto ci = cand_budget.find(tok);
      auto ri = ref_budget.find(tok);
      if (ci != cand_budget.end() && ci->second > 0 && ri->second > 0) {
        ++hits;
        --ci->second;
        --ri->second;
      }
    }
  }
  return make_prf(static_cast<double>(hits) / cand_len,
                  static_cast<double>(hits) / ref_len);
}

PRF rouge_l_sentence(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return PRF{};
  const int l = lcs_length(candidate, reference);
  return make_prf(static_cast<double>(l) / candidate.size(),
                  static_cast<double>(l) / reference.size());
}

BleuResult bleu(const std::vector<Tokens>& candidates,
                const std::vector<Tokens>& references) {
  RIS_VALIDATE(!candidates.empty(), "bleu: empty corpus");
  RIS_VALIDATE(candidates.size() == references.size(),
               "bleu: " << candidates.size() << " candidates vs "
                        << references.size() << " references");
  BleuResult res;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    long long matches = 0, total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto cc = ngram_counts(candidates[i], n);
      const auto rc = ngram_counts(references[i], n);
      for (const auto& [g, c] : cc) {
        total += c;
        auto it = rc.find(g);
        if (it != rc.end()) matches += std::min(c, it->second);
      }
    }
    double p;
    if (matches == 0) {
      p = static_cast<double>(matches + 1) / static_cast<double>(total + 1);
    } else {
      p = static_cast<double>(matches) / static_cast<double>(total);
    }
    res.precisions[n - 1] = p;
    log_sum += std::log(p);
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    res.candidate_len += static_cast<long long>(candidates[i].size());
    res.reference_len += static_cast<long long>(references[i].size());
  }
  if (res.candidate_len == 0) return res;
  res.brevity_penalty =
      res.candidate_len >= res.reference_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(res.reference_len) /
                               static_cast<double>(res.candidate_len));
  res.score = res.brevity_penalty * std::exp(log_sum / 4.0);
  return res;
}

PRF sub_summary_match(const Tokens& candidate, const Tokens& reference,
                      double threshold, const std::string& period) {
  const auto cand_sents = split_sentences(candidate, period);
  const auto ref_sents = split_sentences(reference, period);
  if (cand_sents.empty() || ref_sents.empty()) return PRF{};

  struct Pair {
    double f1;
    int ci, ri;
  };
  std::vector<Pair> pairs;
  for (std::size_t ci = 0; ci < cand_sents.size(); ++ci)
    for (std::size_t ri = 0; ri < ref_sents.size(); ++ri)
      pairs.push_back({rouge_l_sentence(cand_sents[ci], ref_sents[ri]).f1,
                       static_cast<int>(ci), static_cast<int>(ri)});
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.f1 != b.f1) return a.f1 > b.f1;
    if (a.ci != b.ci) return a.ci < b.ci;
    return a.ri < b.ri;
  });
  std::vector<bool> cand_used(cand_sents.size(), false);
  std::vector<bool> ref_used(ref_sents.size(), false);
  int matched = 0;
  for (const Pair& p : pairs) {
    if (p.f1 < threshold) break;
    if (cand_used[p.ci] || ref_used[p.ri]) continue;
    cand_used[p.ci] = ref_used[p.ri] = true;
    ++matched;
  }
  return make_prf(static_cast<double>(matched) / cand_sents.size(),
                  static_cast<double>(matched) / ref_sents.size());
}

// ---------------------------------------------------------------------------
// Student t

namespace {

// Continued fraction for the incomplete beta function (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 200;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_beta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(ln_beta + a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double paired_t_test(const std::vector<double>& scores_a,
                     const std::vector<double>& scores_b) {
  RIS_VALIDATE(scores_a.size() == scores_b.size(),
               "paired_t_test: length mismatch " << scores_a.size() << " vs "
                                                 << scores_b.size());
  const std::size_t n = scores_a.size();
  RIS_VALIDATE(n >= 2, "paired_t_test: need at least 2 pairs, got " << n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += scores_a[i] - scores_b[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = scores_a[i] - scores_b[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);
  if (var == 0.0) {
    std::cerr << "[warn] paired_t_test: zero-variance differences\n";
    return mean == 0.0 ? 1.0 : 0.0;
  }
  const double t = mean / std::sqrt(var / static_cast<double>(n));
  const double df = static_cast<double>(n - 1);
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

}  // namespace ris
