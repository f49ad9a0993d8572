#pragma once

#include <vector>

#include "ris/config.hpp"
#include "ris/corpus.hpp"
#include "ris/tape.hpp"

namespace ris {

struct ModeFlags {
  bool cross = true;      // role-split cross attention + gate + divergence loss
  bool self_att = true;   // inter-decoder role attention
};

inline ModeFlags mode_flags(InteractionMode m) {
  switch (m) {
    case InteractionMode::Both: return {true, true};
    case InteractionMode::Cross: return {true, false};
    case InteractionMode::Self: return {false, true};
    default: return {false, false};
  }
}

// The two role views plus the all-positions mask, as dense arrays usable by
// masked attention. Positions beyond `n` are dropped.
template <typename T>
struct RoleMaskArrays {
  Array<T> user, agent, all;
  bool user_empty = true, agent_empty = true;
};

template <typename T>
RoleMaskArrays<T> make_mask_arrays(const RoleMasks& m, int n) {
  RoleMaskArrays<T> out;
  out.user = Array<T>::vec(n);
  out.agent = Array<T>::vec(n);
  out.all = Array<T>::vec(n);
  for (int i = 0; i < n; ++i) {
    out.user.at(i) = static_cast<T>(m.user[static_cast<std::size_t>(i)]);
    out.agent.at(i) = static_cast<T>(m.agent[static_cast<std::size_t>(i)]);
    out.all.at(i) = std::max(out.user.at(i), out.agent.at(i));
    if (out.user.at(i) != T(0)) out.user_empty = false;
    if (out.agent.at(i) != T(0)) out.agent_empty = false;
  }
  return out;
}

// Per-example training losses, kept as tape refs so callers compose the
// total and drive backward.
template <typename T>
struct ExampleLoss {
  std::vector<Ref> user_gold_logp;  // log-prob of each gold token, pad steps excluded
  std::vector<Ref> agent_gold_logp;
  Ref kl_user, kl_agent;  // valid only when has_kl
  bool has_kl = false;
  Ref coverage_user, coverage_agent;  // step-loss sums (zero scalars for no-coverage variants)
};

struct LossOpts {
  bool with_kl = true;
  bool detach_guide = false;
};

// Attention rows recorded during a teacher-forced pass or a decode, one row
// per step per decoder (head/layer pooled for the transformer variant).
template <typename T>
struct AttnTrace {
  std::vector<Array<T>> user_same, user_cross, agent_same, agent_cross;
  std::vector<Array<T>> user_final, agent_final;
};

// True lengths of one (possibly padded) example.
struct ExampleView {
  const EncodedExample* ex = nullptr;
  int in_len = 0, user_len = 0, agent_len = 0;

  static ExampleView whole(const EncodedExample& e) {
    return {&e, static_cast<int>(e.input_ids.size()),
            static_cast<int>(e.user_target_ids.size()),
            static_cast<int>(e.agent_target_ids.size())};
  }
};

}  // namespace ris
