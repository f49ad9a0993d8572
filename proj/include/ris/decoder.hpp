#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ris/encoder.hpp"
#include "ris/interaction.hpp"
#include "ris/model.hpp"

namespace ris {

// One hidden layer with tanh, then linear, then softmax.
template <typename T>
Ref fuse_and_project(Tape<T>& tp, const std::vector<Ref>& features,
                     Parameter<T>& w1, Parameter<T>& b1, Parameter<T>& w2,
                     Parameter<T>& b2) {
  Ref x = features.size() == 1 ? features[0] : tp.concat(features);
  Ref hidden = tp.tanh_(tp.affine(x, tp.param(w1), tp.param(b1)));
  return tp.softmax(tp.affine(hidden, tp.param(w2), tp.param(b2)));
}

// final(w) = p_gen * P_vocab(w) + (1 - p_gen) * sum_{i: x_i = w} att_i.
// Source tokens outside the vocabulary occupy the extended id range.
template <typename T>
Ref pointer_final_distribution(Tape<T>& tp, Ref p_vocab, Ref p_gen,
                               Ref att_final,
                               const std::vector<int>& ext_input_ids,
                               int ext_vocab_size) {
  const int v = tp.val(p_vocab).d0;
  RIS_REQUIRE(ext_vocab_size >= v,
              "pointer distribution: extended vocab " << ext_vocab_size
                                                      << " smaller than vocab " << v);
  Ref gen = p_vocab;
  if (ext_vocab_size > v)
    gen = tp.concat({p_vocab, tp.constant(Array<T>::vec(ext_vocab_size - v))});
  Ref copy = tp.scatter_add(att_final, ext_input_ids, ext_vocab_size);
  return tp.add(tp.mul(gen, p_gen), tp.mul(copy, tp.one_minus(p_gen)));
}

template <typename T>
struct CoverageStep {
  Ref loss;  // sum_i min(att_i, coverage_i)
  Ref next;  // coverage + att
};

template <typename T>
CoverageStep<T> coverage_update_and_loss(Tape<T>& tp, Ref coverage,
                                         Ref att_final) {
  return {tp.sum_all(tp.min_ew(att_final, coverage)),
          tp.add(coverage, att_final)};
}

// LSTM dual decoder with pointer copy, coverage, and both role interactions.
// The two decoders advance in lockstep: both cells step before either side
// attends, so role attention at step t sees partner states 1..t.
template <typename T>
class RecurrentModel {
 public:
  using Scalar = T;

  RecurrentModel(const RunConfig& cfg, int vocab_size)
      : cfg_(cfg), vocab_(vocab_size), flags_(mode_flags(cfg.mode)) {
    Rng rng = Rng::derive(cfg.seed, 0x7a7a5eedULL);
    ctx_ = 2 * cfg.hidden_dim;
    emb_ = &ps_.uniform("emb", vocab_, cfg.embedding_dim, rng);
    encoder_.init(ps_, "enc", cfg.embedding_dim, cfg.hidden_dim, rng);
    if (flags_.self_att && cfg.share_role_attention)
      role_shared_.init(ps_, "role_attn", cfg.hidden_dim, cfg.hidden_dim,
                        cfg.attn_dim_resolved(), rng);
    init_side(user_, "user_dec", rng);
    init_side(agent_, "agent_dec", rng);
  }

  ParamStore<T>& params() { return ps_; }
  const RunConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_; }
  bool uses_coverage() const { return true; }

  // ---- training --------------------------------------------------------

  ExampleLoss<T> teacher_forced(Tape<T>& tp, const ExampleView& view,
                                const LossOpts& opts,
                                AttnTrace<T>* trace = nullptr) {
    const EncodedExample& ex = *view.ex;
    const int n = view.in_len;
    RIS_REQUIRE(n >= 1 && view.user_len >= 1 && view.agent_len >= 1,
                "teacher_forced: empty example " << ex.id);
    StepCtx sc = make_step_ctx(tp, ex, n);
    if (flags_.cross)
      RIS_VALIDATE(!sc.masks.user_empty && !sc.masks.agent_empty,
                   "example " << ex.id << " lacks tokens for one role");

    EncoderOutput<T> enc = encode(tp, ex, n);
    sc.H = enc.H;

    typename LstmCell<T>::State us{enc.h0, enc.c0}, as{enc.h0, enc.c0};
    std::vector<Ref> uhist, ahist;
    AttnAccumulator<T> u_same, u_cross, a_same, a_cross;
    Ref ucov = tp.constant(Array<T>::vec(n));
    Ref acov = tp.constant(Array<T>::vec(n));
    Ref ucov_loss = tp.scalar(T(0));
    Ref acov_loss = tp.scalar(T(0));
    ExampleLoss<T> el;

    const int tu = view.user_len, ta = view.agent_len;
    for (int t = 0; t < std::max(tu, ta); ++t) {
      Ref uemb, aemb;
      if (t < tu) {
        uemb = embed(tp, t == 0 ? Vocabulary::kBos : ex.user_target_ids[t - 1]);
        us = user_.cell.step(tp, uemb, us);
        uhist.push_back(us.h);
      }
      if (t < ta) {
        aemb = embed(tp, t == 0 ? Vocabulary::kBos : ex.agent_target_ids[t - 1]);
        as = agent_.cell.step(tp, aemb, as);
        ahist.push_back(as.h);
      }
      if (t < tu) {
        SideStep ss = side_step(tp, user_, true, uemb, us.h, sc,
                                stack_window(tp, ahist, uhist.size()), ucov);
        el.user_gold_logp.push_back(
            gold_logp(tp, ss.final_dist, ex.user_target_ext_ids[t]));
        ucov = ss.new_coverage;
        ucov_loss = tp.add(ucov_loss, ss.covloss);
        if (ss.has_cross) {
          u_same.push(tp, ss.att_same);
          u_cross.push(tp, ss.att_cross);
        }
        if (trace) record(tp, *trace, true, ss);
      }
      if (t < ta) {
        SideStep ss = side_step(tp, agent_, false, aemb, as.h, sc,
                                stack_window(tp, uhist, ahist.size()), acov);
        el.agent_gold_logp.push_back(
            gold_logp(tp, ss.final_dist, ex.agent_target_ext_ids[t]));
        acov = ss.new_coverage;
        acov_loss = tp.add(acov_loss, ss.covloss);
        if (ss.has_cross) {
          a_same.push(tp, ss.att_same);
          a_cross.push(tp, ss.att_cross);
        }
        if (trace) record(tp, *trace, false, ss);
      }
    }
    el.coverage_user = ucov_loss;
    el.coverage_agent = acov_loss;
    if (flags_.cross && opts.with_kl) {
      el.kl_user = attention_divergence_loss(tp, a_cross, u_same, opts.detach_guide);
      el.kl_agent = attention_divergence_loss(tp, u_cross, a_same, opts.detach_guide);
      el.has_kl = true;
    }
    return el;
  }

  // ---- decoding --------------------------------------------------------

  // Hypothesis-side state: everything a beam entry carries besides tokens.
  struct DecState {
    Array<T> h, c, coverage;
    std::vector<Array<T>> hist;  // decoder outputs 1..t, exposed to the partner
  };

  class DecodeSession {
   public:
    DecodeSession(RecurrentModel& m, const EncodedExample& ex)
        : m_(m), ex_(&ex) {
      const int n = static_cast<int>(ex.input_ids.size());
      sc_ = m_.make_step_ctx(tp_, ex, n);
      if (m_.flags_.cross)
        RIS_VALIDATE(!sc_.masks.user_empty && !sc_.masks.agent_empty,
                     "example " << ex.id << " lacks tokens for one role");
      EncoderOutput<T> enc = m_.encode(tp_, ex, n);
      sc_.H = enc.H;
      h0_ = tp_.val(enc.h0);
      c0_ = tp_.val(enc.c0);
    }

    DecState initial_state() const {
      return {h0_, c0_, Array<T>::vec(sc_.n), {}};
    }

    int ext_vocab() const { return sc_.ext_vocab; }
    const EncodedExample& example() const { return *ex_; }

    // Lockstep advance: both active cells step, then both sides attend, so
    // each side's role window covers the partner's state from this step.
    // A frozen side keeps its state; its history stays visible.
    void pair_advance(DecState& u, int y_prev_u, bool u_active, DecState& a,
                      int y_prev_a, bool a_active, Array<T>* u_probs,
                      Array<T>* a_probs, AttnTrace<T>* trace = nullptr) {
      Ref uh, uc, uemb, ah, ac, aemb;
      if (u_active) {
        uemb = m_.embed(tp_, m_.emb_id(y_prev_u));
        typename LstmCell<T>::State s{tp_.constant(u.h), tp_.constant(u.c)};
        s = m_.user_.cell.step(tp_, uemb, s);
        uh = s.h;
        uc = s.c;
        u.hist.push_back(tp_.val(s.h));
      }
      if (a_active) {
        aemb = m_.embed(tp_, m_.emb_id(y_prev_a));
        typename LstmCell<T>::State s{tp_.constant(a.h), tp_.constant(a.c)};
        s = m_.agent_.cell.step(tp_, aemb, s);
        ah = s.h;
        ac = s.c;
        a.hist.push_back(tp_.val(s.h));
      }
      if (u_active) {
        Ref cov = tp_.constant(u.coverage);
        SideStep ss = m_.side_step(tp_, m_.user_, true, uemb, uh, sc_,
                                   stack_values(a.hist, u.hist.size()), cov);
        *u_probs = tp_.val(ss.final_dist);
        u.h = tp_.val(uh);
        u.c = tp_.val(uc);
        u.coverage = tp_.val(ss.new_coverage);
        if (trace) m_.record(tp_, *trace, true, ss);
      }
      if (a_active) {
        Ref cov = tp_.constant(a.coverage);
        SideStep ss = m_.side_step(tp_, m_.agent_, false, aemb, ah, sc_,
                                   stack_values(u.hist, a.hist.size()), cov);
        *a_probs = tp_.val(ss.final_dist);
        a.h = tp_.val(ah);
        a.c = tp_.val(ac);
        a.coverage = tp_.val(ss.new_coverage);
        if (trace) m_.record(tp_, *trace, false, ss);
      }
      if (tp_.size() > 200000) compact();
    }

   private:
    RecurrentModel& m_;
    Tape<T> tp_;
    const EncodedExample* ex_;
    typename RecurrentModel::StepCtx sc_;
    Array<T> h0_, c0_;

    Ref stack_values(const std::vector<Array<T>>& hist, std::size_t own_len) {
      if (!m_.flags_.self_att) return Ref{};
      const std::size_t window = std::min(own_len, hist.size());
      RIS_REQUIRE(window >= 1, "role attention: empty partner history");
      std::vector<Ref> rows;
      rows.reserve(window);
      for (std::size_t i = 0; i < window; ++i)
        rows.push_back(tp_.constant(hist[i]));
      return tp_.stack_rows(rows);
    }

    // Recompute the per-example constants on a fresh tape once the old one
    // grows large; hypothesis state lives outside the tape.
    void compact() {
      tp_.clear();
      const int n = static_cast<int>(ex_->input_ids.size());
      sc_ = m_.make_step_ctx(tp_, *ex_, n);
      EncoderOutput<T> enc = m_.encode(tp_, *ex_, n);
      sc_.H = enc.H;
    }
  };

  DecodeSession open_decode(const EncodedExample& ex) {
    return DecodeSession(*this, ex);
  }

  // Attention rows for fixed decoder inputs (BOS-prefixed): a forced decode
  // that records each side's per-step attention.
  void trace_pair(const EncodedExample& ex, const std::vector<int>& user_inputs,
                  const std::vector<int>& agent_inputs, AttnTrace<T>& trace) {
    DecodeSession ses(*this, ex);
    DecState u = ses.initial_state();
    DecState a = ses.initial_state();
    const std::size_t steps = std::max(user_inputs.size(), agent_inputs.size());
    Array<T> up, ap;
    for (std::size_t t = 0; t < steps; ++t) {
      const bool ua = t < user_inputs.size();
      const bool aa = t < agent_inputs.size();
      ses.pair_advance(u, ua ? user_inputs[t] : 0, ua, a,
                       aa ? agent_inputs[t] : 0, aa, &up, &ap, &trace);
    }
  }

 private:
  friend class DecodeSession;

  struct Side {
    LstmCell<T> cell;
    AdditiveAttention<T> enc_attn;
    AdditiveAttention<T> role_attn;  // own module unless shared
    RoleGate<T> gate;
    Parameter<T>* pgen_w = nullptr;
    Parameter<T>* pgen_b = nullptr;
    Parameter<T>* fuse_w1 = nullptr;
    Parameter<T>* fuse_b1 = nullptr;
    Parameter<T>* out_w = nullptr;
    Parameter<T>* out_b = nullptr;
  };

  struct StepCtx {
    Ref H;
    RoleMaskArrays<T> masks;
    std::vector<int> ext_ids;
    int ext_vocab = 0;
    int n = 0;
  };

  struct SideStep {
    Ref final_dist, att_final, att_same, att_cross, p_role, p_gen;
    Ref r_ctx, role_weights;
    Ref covloss, new_coverage;
    bool has_cross = false, has_role = false;
  };

  RunConfig cfg_;
  int vocab_;
  ModeFlags flags_;
  int ctx_ = 0;
  ParamStore<T> ps_;
  Parameter<T>* emb_ = nullptr;
  BiLstmEncoder<T> encoder_;
  AdditiveAttention<T> role_shared_;
  Side user_, agent_;

  void init_side(Side& s, const std::string& prefix, Rng& rng) {
    const int e = cfg_.embedding_dim, h = cfg_.hidden_dim;
    const int a = cfg_.attn_dim_resolved(), f = cfg_.fusion_dim_resolved();
    s.cell.init(ps_, prefix + ".cell", e, h, rng);
    s.enc_attn.init(ps_, prefix + ".enc_attn", h, ctx_, a, rng);
    if (flags_.cross) s.gate.init(ps_, prefix + ".gate", h, ctx_, rng);
    if (flags_.self_att && !cfg_.share_role_attention)
      s.role_attn.init(ps_, prefix + ".role_attn", h, h, a, rng);
    const int fuse_in =
        h + (flags_.self_att ? h : 0) + (flags_.cross ? 2 * ctx_ : ctx_);
    s.fuse_w1 = &ps_.uniform(prefix + ".fuse.w1", f, fuse_in, rng);
    s.fuse_b1 = &ps_.zeros_vec(prefix + ".fuse.b1", f);
    s.out_w = &ps_.uniform(prefix + ".fuse.w2", vocab_, f, rng);
    s.out_b = &ps_.zeros_vec(prefix + ".fuse.b2", vocab_);
    s.pgen_w = &ps_.uniform_vec(prefix + ".pgen.w", ctx_ + h + e, rng);
    s.pgen_b = &ps_.zeros_vec(prefix + ".pgen.b", 1);
  }

  const AdditiveAttention<T>& role_module(const Side& s) const {
    return cfg_.share_role_attention ? role_shared_ : s.role_attn;
  }

  int emb_id(int id) const {
    return id < vocab_ ? id : Vocabulary::kUnk;
  }

  Ref embed(Tape<T>& tp, int id) {
    return tp.row(tp.gather_rows(tp.param(*emb_), {id}), 0);
  }

  StepCtx make_step_ctx(Tape<T>& tp, const EncodedExample& ex, int n) {
    (void)tp;
    StepCtx sc;
    sc.n = n;
    sc.masks = make_mask_arrays<T>(ex.masks, n);
    sc.ext_ids.assign(ex.ext_input_ids.begin(), ex.ext_input_ids.begin() + n);
    sc.ext_vocab = vocab_ + static_cast<int>(ex.oov_tokens.size());
    return sc;
  }

  EncoderOutput<T> encode(Tape<T>& tp, const EncodedExample& ex, int n) {
    std::vector<int> ids(ex.input_ids.begin(), ex.input_ids.begin() + n);
    return encoder_.encode(tp, tp.gather_rows(tp.param(*emb_), ids));
  }

  Ref gold_logp(Tape<T>& tp, Ref final_dist, int gold_id) {
    return tp.log_eps(tp.slice(final_dist, gold_id, gold_id + 1));
  }

  // Partner states 1..min(t, partner length), stacked for role attention.
  Ref stack_window(Tape<T>& tp, const std::vector<Ref>& hist,
                   std::size_t own_len) {
    if (!flags_.self_att) return Ref{};
    const std::size_t window = std::min(own_len, hist.size());
    RIS_REQUIRE(window >= 1, "role attention: empty partner history");
    return tp.stack_rows(
        std::vector<Ref>(hist.begin(), hist.begin() + window));
  }

  // Order of computation per step: embed -> cell (done by the caller) ->
  // cross attention -> gate -> role attention -> fuse -> pointer -> coverage.
  SideStep side_step(Tape<T>& tp, const Side& side, bool is_user, Ref emb_prev,
                     Ref h_t, const StepCtx& sc, Ref partner_stack,
                     Ref coverage) {
    SideStep out;
    Ref att, c_comb;
    std::vector<Ref> ctx_feats;
    if (flags_.cross) {
      const Array<T>& same_mask = is_user ? sc.masks.user : sc.masks.agent;
      const Array<T>& cross_mask = is_user ? sc.masks.agent : sc.masks.user;
      auto ca = cross_attention_dual(tp, side.enc_attn, h_t, sc.H, same_mask,
                                     cross_mask);
      auto gr = side.gate(tp, h_t, ca);
      out.att_same = ca.att_same;
      out.att_cross = ca.att_cross;
      out.p_role = gr.p_role;
      out.has_cross = true;
      att = gr.att_final;
      c_comb = gr.c_final;
      ctx_feats = {ca.c_same, ca.c_cross};
    } else {
      auto r = side.enc_attn(tp, h_t, sc.H, sc.masks.all);
      att = r.dist;
      c_comb = r.ctx;
      ctx_feats = {r.ctx};
    }
    std::vector<Ref> feats = {h_t};
    if (flags_.self_att) {
      auto ra = role_attention(tp, role_module(side), h_t, partner_stack);
      out.r_ctx = ra.r;
      out.role_weights = ra.weights;
      out.has_role = true;
      feats.push_back(ra.r);
    }
    feats.insert(feats.end(), ctx_feats.begin(), ctx_feats.end());
    Ref p_vocab = fuse_and_project(tp, feats, *side.fuse_w1, *side.fuse_b1,
                                   *side.out_w, *side.out_b);
    Ref pg_feat = tp.concat({c_comb, h_t, emb_prev});
    out.p_gen = tp.sigmoid(tp.add(tp.dot(tp.param(*side.pgen_w), pg_feat),
                                  tp.param(*side.pgen_b)));
    out.att_final = att;
    out.final_dist = pointer_final_distribution(tp, p_vocab, out.p_gen, att,
                                                sc.ext_ids, sc.ext_vocab);
    auto cov = coverage_update_and_loss(tp, coverage, att);
    out.covloss = cov.loss;
    out.new_coverage = cov.next;
    return out;
  }

  void record(Tape<T>& tp, AttnTrace<T>& trace, bool is_user, const SideStep& ss) {
    auto& same = is_user ? trace.user_same : trace.agent_same;
    auto& cross = is_user ? trace.user_cross : trace.agent_cross;
    auto& fin = is_user ? trace.user_final : trace.agent_final;
    if (ss.has_cross) {
      same.push_back(tp.val(ss.att_same));
      cross.push_back(tp.val(ss.att_cross));
    }
    fin.push_back(tp.val(ss.att_final));
  }
};

}  // namespace ris
