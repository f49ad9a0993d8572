#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "ris/corpus.hpp"
#include "ris/model.hpp"

namespace ris {

// Tokens that would complete an n-gram already present in the hypothesis:
// the last n-1 tokens plus the candidate may not match any existing window.
inline std::set<int> block_repeat_ngrams(const std::vector<int>& hyp, int n) {
  RIS_VALIDATE(n >= 1, "block_repeat_ngrams: n must be >= 1, got " << n);
  std::set<int> forbidden;
  const std::size_t ctx = static_cast<std::size_t>(n - 1);
  if (hyp.size() < static_cast<std::size_t>(n)) return forbidden;
  const std::size_t suffix = hyp.size() - ctx;
  for (std::size_t i = 0; i + n <= hyp.size(); ++i) {
    bool match = true;
    for (std::size_t j = 0; j < ctx; ++j) {
      if (hyp[i + j] != hyp[suffix + j]) {
        match = false;
        break;
      }
    }
    if (match) forbidden.insert(hyp[i + ctx]);
  }
  return forbidden;
}

struct DecodeLimits {
  int beam = 5;
  int min_len = 10;
  int max_len = 100;
  int block_ngram = 0;  // 0 disables
  bool length_normalize = false;
};

struct DecodedSide {
  std::vector<int> ids;  // extended-vocab ids, EOS excluded
  double logprob = 0.0;
  bool finished = false;
};

struct DecodedPair {
  DecodedSide user, agent;
};

namespace beam_detail {

// Candidate next tokens by descending probability; PAD and BOS are never
// emitted, EOS only once min_len is reached, and n-gram blocking applies.
template <typename T>
std::vector<std::pair<int, double>> top_tokens(const Array<T>& probs,
                                               const std::vector<int>& ids,
                                               const DecodeLimits& lim,
                                               int want) {
  std::set<int> forbidden;
  if (lim.block_ngram > 0)
    forbidden = block_repeat_ngrams(ids, lim.block_ngram);
  std::vector<std::pair<int, double>> all;
  all.reserve(static_cast<std::size_t>(probs.numel()));
  for (int t = 0; t < probs.numel(); ++t) {
    if (t == Vocabulary::kPad || t == Vocabulary::kBos) continue;
    if (t == Vocabulary::kEos && static_cast<int>(ids.size()) < lim.min_len)
      continue;
    if (forbidden.count(t)) continue;
    all.emplace_back(t, static_cast<double>(probs.at(t)));
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(all.size()) > want) all.resize(static_cast<std::size_t>(want));
  return all;
}

inline double side_score(double logprob, std::size_t len, bool normalize) {
  if (!normalize) return logprob;
  return logprob / static_cast<double>(std::max<std::size_t>(len, 1));
}

}  // namespace beam_detail

template <typename Model>
struct BeamHyp {
  std::vector<int> ids;
  double logprob = 0.0;
  bool finished = false;  // EOS emitted
  typename Model::DecState st;

  bool stopped(int max_len) const {
    return finished || static_cast<int>(ids.size()) >= max_len;
  }
};

template <typename Model>
using BeamObserver =
    std::function<void(int, const std::vector<BeamHyp<Model>>&,
                       const std::vector<BeamHyp<Model>>&)>;

// Paired dual-beam search: the k-th user hypothesis conditions on the k-th
// agent hypothesis for role attention and vice versa. Sides re-rank
// independently each step; a fully finished side freezes while the other
// keeps searching against its states.
template <typename Model>
DecodedPair interactive_beam_search(
    Model& model, const EncodedExample& ex, const DecodeLimits& lim,
    const std::type_identity_t<BeamObserver<Model>>& observer = {}) {
  using T = typename Model::Scalar;
  using Hyp = BeamHyp<Model>;
  RIS_VALIDATE(lim.beam >= 1, "beam must be >= 1, got " << lim.beam);
  RIS_VALIDATE(lim.min_len <= lim.max_len && lim.max_len >= 1,
               "bad length limits [" << lim.min_len << "," << lim.max_len << "]");
  auto ses = model.open_decode(ex);

  std::vector<Hyp> user(1), agent(1);
  user[0].st = ses.initial_state();
  agent[0].st = ses.initial_state();

  struct Cand {
    double score;
    int parent;
    int token;  // -1 carries a stopped hypothesis through unchanged
  };
  auto rank = [](std::vector<Cand>& cands) {
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
  };

  for (int step = 0; step < lim.max_len + 1; ++step) {
    bool any_active = false;
    const std::size_t width = user.size();
    std::vector<Hyp> adv_user(user), adv_agent(agent);
    std::vector<Array<T>> uprobs(width), aprobs(width);
    std::vector<bool> uact(width, false), aact(width, false);
    for (std::size_t k = 0; k < width; ++k) {
      uact[k] = !user[k].stopped(lim.max_len);
      aact[k] = !agent[k].stopped(lim.max_len);
      // A hypothesis that reached max_len unfinished stops expanding; one
      // that emitted EOS is frozen. Either way its states stay visible.
      if (!uact[k] && !aact[k]) continue;
      any_active = true;
      const int ypu = adv_user[k].ids.empty() ? Vocabulary::kBos
                                              : adv_user[k].ids.back();
      const int ypa = adv_agent[k].ids.empty() ? Vocabulary::kBos
                                               : adv_agent[k].ids.back();
      ses.pair_advance(adv_user[k].st, ypu, uact[k], adv_agent[k].st, ypa,
                       aact[k], &uprobs[k], &aprobs[k]);
    }
    if (!any_active) break;

    auto expand_side = [&](std::vector<Hyp>& beam, std::vector<Hyp>& advanced,
                           std::vector<Array<T>>& probs, std::vector<bool>& act) {
      std::vector<Cand> cands;
      for (std::size_t k = 0; k < beam.size(); ++k) {
        if (!act[k]) {
          cands.push_back({beam[k].logprob, static_cast<int>(k), -1});
          continue;
        }
        for (auto [tok, p] : beam_detail::top_tokens(probs[k], beam[k].ids, lim,
                                                     lim.beam)) {
          cands.push_back({beam[k].logprob + std::log(std::max(p, 1e-300)),
                           static_cast<int>(k), tok});
        }
      }
      rank(cands);
      std::vector<Hyp> next;
      const std::size_t keep =
          std::min<std::size_t>(static_cast<std::size_t>(lim.beam), cands.size());
      for (std::size_t i = 0; i < keep; ++i) {
        const Cand& c = cands[i];
        if (c.token < 0) {
          next.push_back(beam[static_cast<std::size_t>(c.parent)]);
          continue;
        }
        Hyp h = advanced[static_cast<std::size_t>(c.parent)];
        h.logprob = c.score;
        if (c.token == Vocabulary::kEos) {
          h.finished = true;
        } else {
          h.ids.push_back(c.token);
        }
        next.push_back(std::move(h));
      }
      beam = std::move(next);
    };
    expand_side(user, adv_user, uprobs, uact);
    expand_side(agent, adv_agent, aprobs, aact);
    if (observer) observer(step, user, agent);
  }

  auto pick = [&](const std::vector<Hyp>& beam) {
    DecodedSide out;
    const Hyp* best = nullptr;
    for (const Hyp& h : beam) {
      if (!h.finished) continue;
      if (!best || beam_detail::side_score(h.logprob, h.ids.size(),
                                           lim.length_normalize) >
                       beam_detail::side_score(best->logprob, best->ids.size(),
                                               lim.length_normalize))
        best = &h;
    }
    if (!best) {
      for (const Hyp& h : beam) {
        if (!best || beam_detail::side_score(h.logprob, h.ids.size(),
                                             lim.length_normalize) >
                         beam_detail::side_score(best->logprob, best->ids.size(),
                                                 lim.length_normalize))
          best = &h;
      }
    }
    out.ids = best->ids;
    out.logprob = best->logprob;
    out.finished = best->finished;
    return out;
  };
  return {pick(user), pick(agent)};
}

// Both decoders advance in lockstep picking argmax tokens, with role
// attention over the partner's greedy history.
template <typename Model>
DecodedPair greedy_decode(Model& model, const EncodedExample& ex,
                          const DecodeLimits& lim) {
  DecodeLimits g = lim;
  g.beam = 1;
  return interactive_beam_search(model, ex, g);
}

}  // namespace ris
