#pragma once

#include <string>
#include <vector>

#include "ris/param.hpp"
#include "ris/tape.hpp"

namespace ris {

// Bahdanau-style scoring: score_i = v . tanh(Wq q + Wk k_i + b).
template <typename T>
struct AdditiveAttention {
  Parameter<T>* wq = nullptr;  // [a x q_dim]
  Parameter<T>* wk = nullptr;  // [a x k_dim]
  Parameter<T>* b = nullptr;   // [a]
  Parameter<T>* v = nullptr;   // [a]

  void init(ParamStore<T>& ps, const std::string& prefix, int q_dim, int k_dim,
            int a_dim, Rng& rng) {
    wq = &ps.uniform(prefix + ".wq", a_dim, q_dim, rng);
    wk = &ps.uniform(prefix + ".wk", a_dim, k_dim, rng);
    b = &ps.zeros_vec(prefix + ".b", a_dim);
    v = &ps.uniform_vec(prefix + ".v", a_dim, rng);
  }

  struct Result {
    Ref dist;  // over key rows, restricted to the mask
    Ref ctx;   // sum_i dist_i * k_i
  };

  Result operator()(Tape<T>& tp, Ref query, Ref keys /* [n x k] */,
                    const Array<T>& mask) const {
    Ref kp = tp.matmul(keys, tp.param(*wk), false, true);       // [n x a]
    Ref qp = tp.add(tp.matmul(tp.param(*wq), query), tp.param(*b));  // [a]
    Ref scores = tp.matmul(tp.tanh_(tp.add(kp, qp)), tp.param(*v));  // [n]
    Ref dist = tp.masked_softmax(scores, mask);
    return {dist, tp.matmul(dist, keys)};
  }
};

template <typename T>
struct CrossAttnResult {
  Ref att_same, att_cross;  // distributions over input positions
  Ref c_same, c_cross;      // context vectors
};

// One attention module applied to the two role views of the encoder states.
template <typename T>
CrossAttnResult<T> cross_attention_dual(Tape<T>& tp,
                                        const AdditiveAttention<T>& attn,
                                        Ref h_dec, Ref H,
                                        const Array<T>& same_mask,
                                        const Array<T>& cross_mask) {
  auto same = attn(tp, h_dec, H, same_mask);
  auto cross = attn(tp, h_dec, H, cross_mask);
  return {same.dist, cross.dist, same.ctx, cross.ctx};
}

// Learned scalar gate mixing the same-role and cross-role attention into the
// single distribution used by copy and coverage.
template <typename T>
struct RoleGate {
  Parameter<T>* w = nullptr;  // over [h_dec; c_same; c_cross]
  Parameter<T>* b = nullptr;  // [1]

  void init(ParamStore<T>& ps, const std::string& prefix, int h_dim, int ctx_dim,
            Rng& rng) {
    w = &ps.uniform_vec(prefix + ".w", h_dim + 2 * ctx_dim, rng);
    b = &ps.zeros_vec(prefix + ".b", 1);
  }

  struct Result {
    Ref p_role;     // scalar in (0,1)
    Ref att_final;  // p_role*att_same + (1-p_role)*att_cross
    Ref c_final;    // the same convex combination of the contexts
  };

  Result operator()(Tape<T>& tp, Ref h_dec, const CrossAttnResult<T>& ca) const {
    Ref feat = tp.concat({h_dec, ca.c_same, ca.c_cross});
    Ref p = tp.sigmoid(tp.add(tp.dot(tp.param(*w), feat), tp.param(*b)));
    Ref q = tp.one_minus(p);
    Ref att = tp.add(tp.mul(ca.att_same, p), tp.mul(ca.att_cross, q));
    Ref ctx = tp.add(tp.mul(ca.c_same, p), tp.mul(ca.c_cross, q));
    return {p, att, ctx};
  }
};

// Running sum of per-step attention distributions; average() is their mean.
template <typename T>
struct AttnAccumulator {
  Ref sum;
  int count = 0;

  void push(Tape<T>& tp, Ref dist) {
    sum = count == 0 ? dist : tp.add(sum, dist);
    ++count;
  }

  Ref average(Tape<T>& tp) const {
    RIS_REQUIRE(count >= 1, "AttnAccumulator: empty accumulator");
    return tp.scale(sum, T(1) / static_cast<T>(count));
  }
};

// KL(Avg(cross) || Avg(same)): the first argument is the partner decoder's
// averaged cross-role attention, the second the owning decoder's averaged
// same-role attention. detach_guide turns the guide into a constant so no
// gradient reaches the same-role branch.
template <typename T>
Ref attention_divergence_loss(Tape<T>& tp, const AttnAccumulator<T>& cross_acc,
                              const AttnAccumulator<T>& same_acc,
                              bool detach_guide = false) {
  Ref p = cross_acc.average(tp);
  Ref q = same_acc.average(tp);
  if (detach_guide) q = tp.constant(tp.val(q));
  return kl_divergence(tp, p, q);
}

template <typename T>
struct RoleAttnResult {
  Ref weights;  // over partner steps 1..t'
  Ref r;        // role context vector
};

// Attention from one decoder's state over the partner decoder's states for
// steps 1..t'. No role mask applies; the window is every state the partner
// has produced so far.
template <typename T>
RoleAttnResult<T> role_attention(Tape<T>& tp, const AdditiveAttention<T>& attn,
                                 Ref h_t, Ref partner_states /* [t' x h] */) {
  const int tprime = tp.val(partner_states).d0;
  RIS_REQUIRE(tprime >= 1, "role_attention: empty partner history");
  Array<T> ones = Array<T>::vec(tprime, T(1));
  auto res = attn(tp, h_t, partner_states, ones);
  return {res.dist, res.ctx};
}

}  // namespace ris
