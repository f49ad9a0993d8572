#pragma once

#include <string>
#include <vector>

namespace ris {

using Tokens = std::vector<std::string>;

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PRF make_prf(double p, double r);

// Split a token sequence into sentences on the period token. Trailing
// material without a period forms a final sentence; the period itself is
// dropped from the sentence.
std::vector<Tokens> split_sentences(const Tokens& tokens,
                                    const std::string& period = ".");

int lcs_length(const Tokens& a, const Tokens& b);

// Clipped n-gram overlap.
PRF rouge_n(const Tokens& candidate, const Tokens& reference, int n);

// Summary-level ROUGE-L: union-LCS of each reference sentence against the
// candidate sentences; precision over candidate length, recall over
// reference length.
PRF rouge_l(const Tokens& candidate, const Tokens& reference,
            const std::string& period = ".");

// Sentence-level ROUGE-L over two single sentences (plain LCS P/R/F1).
PRF rouge_l_sentence(const Tokens& candidate, const Tokens& reference);

struct BleuResult {
  double score = 0.0;
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  long long candidate_len = 0;
  long long reference_len = 0;
};

// Corpus-level BLEU-4 with add-one smoothing on zero counts.
BleuResult bleu(const std::vector<Tokens>& candidates,
                const std::vector<Tokens>& references);

// Greedy one-to-one sub-summary matching by descending pairwise sentence
// ROUGE-L F1; a pair counts as matched when its F1 reaches the threshold.
PRF sub_summary_match(const Tokens& candidate, const Tokens& reference,
                      double threshold = 0.5, const std::string& period = ".");

// Two-sided paired Student t-test. Zero-variance differences degenerate to
// p=1 (zero mean difference) or p=0, with a warning.
double paired_t_test(const std::vector<double>& scores_a,
                     const std::vector<double>& scores_b);

// Regularized incomplete beta function (used for the t-distribution tail).
double incomplete_beta(double a, double b, double x);

}  // namespace ris
