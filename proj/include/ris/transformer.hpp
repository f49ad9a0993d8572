#pragma once

#include <string>
#include <vector>

#include "ris/interaction.hpp"
#include "ris/model.hpp"

namespace ris {

// Scaled dot-product attention with separate per-head projections.
template <typename T>
struct MultiHeadAttention {
  std::vector<Parameter<T>*> wq, wk, wv;  // [dk x d] per head
  Parameter<T>* wo = nullptr;             // [d x d]
  int heads = 0, dk = 0, d = 0;

  void init(ParamStore<T>& ps, const std::string& prefix, int d_model,
            int n_heads, Rng& rng) {
    RIS_REQUIRE(d_model % n_heads == 0,
                "d_model " << d_model << " not divisible by heads " << n_heads);
    heads = n_heads;
    d = d_model;
    dk = d_model / n_heads;
    for (int h = 0; h < n_heads; ++h) {
      const std::string hs = std::to_string(h);
      wq.push_back(&ps.uniform(prefix + ".q" + hs, dk, d, rng));
      wk.push_back(&ps.uniform(prefix + ".k" + hs, dk, d, rng));
      wv.push_back(&ps.uniform(prefix + ".v" + hs, dk, d, rng));
    }
    wo = &ps.uniform(prefix + ".o", d, d, rng);
  }

  struct Result {
    Ref out;               // [Tq x d]
    std::vector<Ref> att;  // per head, [Tq x Tk]
  };

  Result operator()(Tape<T>& tp, Ref queries, Ref keys,
                    const Array<T>& mask /* [Tq x Tk] */) const {
    Result res;
    std::vector<Ref> head_ctx;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));
    for (int h = 0; h < heads; ++h) {
      Ref q = tp.matmul(queries, tp.param(*wq[h]), false, true);  // [Tq x dk]
      Ref k = tp.matmul(keys, tp.param(*wk[h]), false, true);     // [Tk x dk]
      Ref v = tp.matmul(keys, tp.param(*wv[h]), false, true);
      Ref scores = tp.scale(tp.matmul(q, k, false, true), inv_sqrt);
      Ref att = tp.masked_softmax(scores, mask);
      res.att.push_back(att);
      head_ctx.push_back(tp.matmul(att, v));
    }
    Ref ctx = heads == 1 ? head_ctx[0] : tp.concat_cols(head_ctx);
    res.out = tp.matmul(ctx, tp.param(*wo), false, true);
    return res;
  }
};

template <typename T>
struct LayerNormParams {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;
  void init(ParamStore<T>& ps, const std::string& prefix, int d) {
    gain = &ps.ones_vec(prefix + ".gain", d);
    bias = &ps.zeros_vec(prefix + ".bias", d);
  }
  Ref operator()(Tape<T>& tp, Ref x) const {
    return tp.layer_norm(x, tp.param(*gain), tp.param(*bias));
  }
};

template <typename T>
struct FeedForward {
  Parameter<T>* w1 = nullptr;
  Parameter<T>* b1 = nullptr;
  Parameter<T>* w2 = nullptr;
  Parameter<T>* b2 = nullptr;
  void init(ParamStore<T>& ps, const std::string& prefix, int d, int ffn,
            Rng& rng) {
    w1 = &ps.uniform(prefix + ".w1", ffn, d, rng);
    b1 = &ps.zeros_vec(prefix + ".b1", ffn);
    w2 = &ps.uniform(prefix + ".w2", d, ffn, rng);
    b2 = &ps.zeros_vec(prefix + ".b2", d);
  }
  Ref operator()(Tape<T>& tp, Ref x) const {
    Ref h = tp.gelu(tp.add(tp.matmul(x, tp.param(*w1), false, true), tp.param(*b1)));
    return tp.add(tp.matmul(h, tp.param(*w2), false, true), tp.param(*b2));
  }
};

// ---- mask builders --------------------------------------------------------

template <typename T>
Array<T> rows_of_mask(int rows, const Array<T>& key_mask) {
  Array<T> m = Array<T>::mat(rows, key_mask.d0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < key_mask.d0; ++j) m.at(i, j) = key_mask.at(j);
  return m;
}

template <typename T>
Array<T> causal_mask(int t) {
  Array<T> m = Array<T>::mat(t, t);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j <= i; ++j) m.at(i, j) = T(1);
  return m;
}

// Position i may see partner steps 1..min(i+1, t_partner).
template <typename T>
Array<T> partner_window_mask(int t_own, int t_partner) {
  Array<T> m = Array<T>::mat(t_own, t_partner);
  for (int i = 0; i < t_own; ++i)
    for (int j = 0; j < t_partner && j <= i; ++j) m.at(i, j) = T(1);
  return m;
}

// ---- encoder ---------------------------------------------------------------

template <typename T>
struct TransformerEncoderLayer {
  MultiHeadAttention<T> self_attn;
  LayerNormParams<T> ln1, ln2;
  FeedForward<T> ff;
  void init(ParamStore<T>& ps, const std::string& prefix, int d, int heads,
            int ffn, Rng& rng) {
    self_attn.init(ps, prefix + ".self", d, heads, rng);
    ln1.init(ps, prefix + ".ln1", d);
    ff.init(ps, prefix + ".ff", d, ffn, rng);
    ln2.init(ps, prefix + ".ln2", d);
  }
};

// Self-attention + feed-forward stack over token + learned position
// embeddings; pad positions are masked out of every attention row.
template <typename T>
struct TransformerEncoder {
  std::vector<TransformerEncoderLayer<T>> layers;
  Parameter<T>* pos = nullptr;  // [max_pos x d]
  int d = 0;

  void init(ParamStore<T>& ps, const std::string& prefix, int d_model,
            int layer_count, int heads, int ffn, int max_pos, Rng& rng) {
    d = d_model;
    pos = &ps.uniform(prefix + ".pos", max_pos, d_model, rng);
    layers.resize(static_cast<std::size_t>(layer_count));
    for (int l = 0; l < layer_count; ++l)
      layers[static_cast<std::size_t>(l)].init(
          ps, prefix + ".l" + std::to_string(l), d_model, heads, ffn, rng);
  }

  Ref encode(Tape<T>& tp, Ref emb_rows, const Array<T>& pad_mask,
             std::vector<Ref>* att_out = nullptr) const {
    const int n = tp.val(emb_rows).d0;
    RIS_VALIDATE(n <= tp.val(tp.param(*pos)).d0,
                 "input length " << n << " exceeds positional table "
                                 << pos->value.d0);
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    Ref x = tp.add(emb_rows, tp.gather_rows(tp.param(*pos), ids));
    const Array<T> attn_mask = rows_of_mask(n, pad_mask);
    for (const auto& layer : layers) {
      auto sa = layer.self_attn(tp, x, x, attn_mask);
      if (att_out)
        att_out->insert(att_out->end(), sa.att.begin(), sa.att.end());
      x = layer.ln1(tp, tp.add(x, sa.out));
      x = layer.ln2(tp, tp.add(x, layer.ff(tp, x)));
    }
    return x;
  }
};

// ---- dual decoder ----------------------------------------------------------

template <typename T>
struct TransformerDecoderLayer {
  MultiHeadAttention<T> self_attn;
  MultiHeadAttention<T> cross_attn;  // one module, two role views
  MultiHeadAttention<T> role_attn;   // separate projections
  LayerNormParams<T> ln1, ln2, ln3;
  FeedForward<T> ff;

  void init(ParamStore<T>& ps, const std::string& prefix, int d, int heads,
            int ffn, const ModeFlags& flags, Rng& rng) {
    self_attn.init(ps, prefix + ".self", d, heads, rng);
    cross_attn.init(ps, prefix + ".cross", d, heads, rng);
    if (flags.self_att) role_attn.init(ps, prefix + ".role", d, heads, rng);
    ln1.init(ps, prefix + ".ln1", d);
    ln2.init(ps, prefix + ".ln2", d);
    ln3.init(ps, prefix + ".ln3", d);
    ff.init(ps, prefix + ".ff", d, ffn, rng);
  }
};

// Transformer-based dual decoder. Sub-layer order per layer: causal
// self-attention, then the two role-masked cross attentions plus the role
// attention over the partner's same-layer self-attention outputs (summed
// with the residual), then feed-forward; layer norm after each residual.
// No copy or coverage mechanism; the final distribution is the vocabulary
// softmax padded with zeros over extended ids.
template <typename T>
class TransformerModel {
 public:
  using Scalar = T;

  TransformerModel(const RunConfig& cfg, int vocab_size)
      : cfg_(cfg), vocab_(vocab_size), flags_(mode_flags(cfg.mode)) {
    RIS_VALIDATE(cfg.variant == Variant::Transformer,
                 "TransformerModel requires variant=transformer");
    Rng rng = Rng::derive(cfg.seed, 0x7a7a5eedULL);
    d_ = cfg.hidden_dim;
    emb_ = &ps_.uniform("emb", vocab_, cfg.embedding_dim, rng);
    if (cfg.embedding_dim != d_)
      emb_proj_ = &ps_.uniform("emb_proj", d_, cfg.embedding_dim, rng);
    encoder_.init(ps_, "enc", d_, cfg.layer_count, cfg.heads, cfg.ffn_dim,
                  cfg.max_input_len, rng);
    dec_pos_ = &ps_.uniform("dec_pos", cfg.max_output_resolved() + 2, d_, rng);
    init_side(user_, "user_dec", rng);
    init_side(agent_, "agent_dec", rng);
  }

  ParamStore<T>& params() { return ps_; }
  const RunConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_; }
  bool uses_coverage() const { return false; }

  ExampleLoss<T> teacher_forced(Tape<T>& tp, const ExampleView& view,
                                const LossOpts& opts,
                                AttnTrace<T>* trace = nullptr) {
    const EncodedExample& ex = *view.ex;
    RIS_REQUIRE(view.in_len >= 1 && view.user_len >= 1 && view.agent_len >= 1,
                "teacher_forced: empty example " << ex.id);
    StepCtx sc = make_step_ctx(tp, ex, view.in_len);

    std::vector<int> user_in(1, Vocabulary::kBos), agent_in(1, Vocabulary::kBos);
    for (int t = 0; t + 1 < view.user_len; ++t)
      user_in.push_back(ex.user_target_ids[static_cast<std::size_t>(t)]);
    for (int t = 0; t + 1 < view.agent_len; ++t)
      agent_in.push_back(ex.agent_target_ids[static_cast<std::size_t>(t)]);

    PairedOut out = paired_forward(tp, user_in, agent_in, sc, trace);

    ExampleLoss<T> el;
    for (int t = 0; t < view.user_len; ++t) {
      const int gold = ex.user_target_ids[static_cast<std::size_t>(t)];
      el.user_gold_logp.push_back(
          tp.log_eps(tp.slice(out.user_rows, t * vocab_ + gold,
                              t * vocab_ + gold + 1)));
    }
    for (int t = 0; t < view.agent_len; ++t) {
      const int gold = ex.agent_target_ids[static_cast<std::size_t>(t)];
      el.agent_gold_logp.push_back(
          tp.log_eps(tp.slice(out.agent_rows, t * vocab_ + gold,
                              t * vocab_ + gold + 1)));
    }
    el.coverage_user = tp.scalar(T(0));
    el.coverage_agent = tp.scalar(T(0));
    if (out.has_attn && opts.with_kl) {
      AttnAccumulator<T> u_same, u_cross, a_same, a_cross;
      for (int t = 0; t < view.user_len; ++t) {
        u_same.push(tp, tp.row(out.u_same, t));
        u_cross.push(tp, tp.row(out.u_cross, t));
      }
      for (int t = 0; t < view.agent_len; ++t) {
        a_same.push(tp, tp.row(out.a_same, t));
        a_cross.push(tp, tp.row(out.a_cross, t));
      }
      el.kl_user = attention_divergence_loss(tp, a_cross, u_same, opts.detach_guide);
      el.kl_agent = attention_divergence_loss(tp, u_cross, a_same, opts.detach_guide);
      el.has_kl = true;
    }
    return el;
  }

  // ---- decoding ----------------------------------------------------------

  // The full prefix is recomputed by a paired forward at every step, so a
  // hypothesis only needs its consumed inputs.
  struct DecState {
    std::vector<int> inputs;  // BOS followed by emitted tokens
  };

  class DecodeSession {
   public:
    DecodeSession(TransformerModel& m, const EncodedExample& ex)
        : m_(m), ex_(&ex) {}

    DecState initial_state() const { return {}; }

    int ext_vocab() const {
      return m_.vocab_ + static_cast<int>(ex_->oov_tokens.size());
    }
    const EncodedExample& example() const { return *ex_; }

    void pair_advance(DecState& u, int y_prev_u, bool u_active, DecState& a,
                      int y_prev_a, bool a_active, Array<T>* u_probs,
                      Array<T>* a_probs) {
      if (u_active) u.inputs.push_back(m_.emb_id(y_prev_u));
      if (a_active) a.inputs.push_back(m_.emb_id(y_prev_a));
      Tape<T> tp;
      StepCtx sc = m_.make_step_ctx(tp, *ex_, static_cast<int>(ex_->input_ids.size()));
      PairedOut out = m_.paired_forward(tp, u.inputs, a.inputs, sc);
      const int ext = ext_vocab();
      auto last_row = [&](Ref rows, int t) {
        Array<T> probs = Array<T>::vec(ext);
        const Array<T>& rv = tp.val(rows);
        for (int j = 0; j < m_.vocab_; ++j) probs.at(j) = rv.at(t, j);
        return probs;
      };
      if (u_active && u_probs)
        *u_probs = last_row(out.user_rows, static_cast<int>(u.inputs.size()) - 1);
      if (a_active && a_probs)
        *a_probs = last_row(out.agent_rows, static_cast<int>(a.inputs.size()) - 1);
    }

   private:
    TransformerModel& m_;
    const EncodedExample* ex_;
  };

  DecodeSession open_decode(const EncodedExample& ex) {
    return DecodeSession(*this, ex);
  }

  // Attention rows for fixed decoder inputs (BOS-prefixed), one paired pass.
  void trace_pair(const EncodedExample& ex, const std::vector<int>& user_inputs,
                  const std::vector<int>& agent_inputs, AttnTrace<T>& trace) {
    Tape<T> tp;
    StepCtx sc = make_step_ctx(tp, ex, static_cast<int>(ex.input_ids.size()));
    paired_forward(tp, user_inputs, agent_inputs, sc, &trace);
  }

 private:
  friend class DecodeSession;

  struct Side {
    std::vector<TransformerDecoderLayer<T>> layers;
    Parameter<T>* out_w = nullptr;
    Parameter<T>* out_b = nullptr;
  };

  struct StepCtx {
    Ref H;
    bool encoded = false;
    RoleMaskArrays<T> masks;
    int n = 0;
  };

  struct PairedOut {
    Ref user_rows, agent_rows;              // [T x V] softmax rows
    Ref u_same, u_cross, a_same, a_cross;   // [T x n], pooled over layers+heads
    bool has_attn = false;
  };

  RunConfig cfg_;
  int vocab_;
  ModeFlags flags_;
  int d_ = 0;
  ParamStore<T> ps_;
  Parameter<T>* emb_ = nullptr;
  Parameter<T>* emb_proj_ = nullptr;
  Parameter<T>* dec_pos_ = nullptr;
  TransformerEncoder<T> encoder_;
  Side user_, agent_;

  void init_side(Side& s, const std::string& prefix, Rng& rng) {
    s.layers.resize(static_cast<std::size_t>(cfg_.layer_count));
    for (int l = 0; l < cfg_.layer_count; ++l)
      s.layers[static_cast<std::size_t>(l)].init(
          ps_, prefix + ".l" + std::to_string(l), d_, cfg_.heads, cfg_.ffn_dim,
          flags_, rng);
    s.out_w = &ps_.uniform(prefix + ".out.w", vocab_, d_, rng);
    s.out_b = &ps_.zeros_vec(prefix + ".out.b", vocab_);
  }

  int emb_id(int id) const { return id < vocab_ ? id : Vocabulary::kUnk; }

  Ref embed_rows(Tape<T>& tp, const std::vector<int>& ids) {
    std::vector<int> clamped;
    clamped.reserve(ids.size());
    for (int id : ids) clamped.push_back(emb_id(id));
    Ref rows = tp.gather_rows(tp.param(*emb_), clamped);
    if (emb_proj_) rows = tp.matmul(rows, tp.param(*emb_proj_), false, true);
    return rows;
  }

  StepCtx make_step_ctx(Tape<T>& tp, const EncodedExample& ex, int n) {
    StepCtx sc;
    sc.n = n;
    sc.masks = make_mask_arrays<T>(ex.masks, n);
    if (flags_.cross)
      RIS_VALIDATE(!sc.masks.user_empty && !sc.masks.agent_empty,
                   "example " << ex.id << " lacks tokens for one role");
    std::vector<int> ids(ex.input_ids.begin(), ex.input_ids.begin() + n);
    sc.H = encoder_.encode(tp, embed_rows(tp, ids), sc.masks.all);
    return sc;
  }

  Ref dec_input(Tape<T>& tp, const std::vector<int>& ids) {
    const int t = static_cast<int>(ids.size());
    RIS_VALIDATE(t <= tp.val(tp.param(*dec_pos_)).d0,
                 "decode length " << t << " exceeds positional table "
                                  << dec_pos_->value.d0);
    std::vector<int> positions(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) positions[static_cast<std::size_t>(i)] = i;
    return tp.add(embed_rows(tp, ids), tp.gather_rows(tp.param(*dec_pos_), positions));
  }

  // Mean over heads of each head's attention matrix.
  Ref pool_heads(Tape<T>& tp, const std::vector<Ref>& atts) {
    Ref sum = atts[0];
    for (std::size_t i = 1; i < atts.size(); ++i) sum = tp.add(sum, atts[i]);
    return tp.scale(sum, T(1) / static_cast<T>(atts.size()));
  }

  PairedOut paired_forward(Tape<T>& tp, const std::vector<int>& user_in,
                           const std::vector<int>& agent_in, const StepCtx& sc,
                           AttnTrace<T>* trace = nullptr) {
    const int tu = static_cast<int>(user_in.size());
    const int ta = static_cast<int>(agent_in.size());
    Ref xu = dec_input(tp, user_in);
    Ref xa = dec_input(tp, agent_in);
    const Array<T> causal_u = causal_mask<T>(tu);
    const Array<T> causal_a = causal_mask<T>(ta);
    const Array<T> win_u = partner_window_mask<T>(tu, ta);
    const Array<T> win_a = partner_window_mask<T>(ta, tu);
    PairedOut out;
    std::vector<Ref> us_pool, uc_pool, as_pool, ac_pool;

    for (std::size_t l = 0; l < user_.layers.size(); ++l) {
      const auto& ul = user_.layers[l];
      const auto& al = agent_.layers[l];
      // Both self-attention sub-layers first: their outputs are the role
      // attention keys for the partner at this layer.
      auto su = ul.self_attn(tp, xu, xu, causal_u);
      Ref s_user = ul.ln1(tp, tp.add(xu, su.out));
      auto sa = al.self_attn(tp, xa, xa, causal_a);
      Ref s_agent = al.ln1(tp, tp.add(xa, sa.out));

      xu = interaction_sublayers(tp, ul, s_user, s_agent, sc, win_u,
                                 /*is_user=*/true, us_pool, uc_pool);
      xa = interaction_sublayers(tp, al, s_agent, s_user, sc, win_a,
                                 /*is_user=*/false, as_pool, ac_pool);
    }

    out.user_rows = project_rows(tp, xu, user_);
    out.agent_rows = project_rows(tp, xa, agent_);
    if (flags_.cross && !us_pool.empty()) {
      out.u_same = pool_heads(tp, us_pool);
      out.u_cross = pool_heads(tp, uc_pool);
      out.a_same = pool_heads(tp, as_pool);
      out.a_cross = pool_heads(tp, ac_pool);
      out.has_attn = true;
      if (trace) {
        for (int t = 0; t < tu; ++t) {
          trace->user_same.push_back(row_values(tp, out.u_same, t));
          trace->user_cross.push_back(row_values(tp, out.u_cross, t));
        }
        for (int t = 0; t < ta; ++t) {
          trace->agent_same.push_back(row_values(tp, out.a_same, t));
          trace->agent_cross.push_back(row_values(tp, out.a_cross, t));
        }
      }
    }
    return out;
  }

  Ref interaction_sublayers(Tape<T>& tp, const TransformerDecoderLayer<T>& layer,
                            Ref s_own, Ref s_partner, const StepCtx& sc,
                            const Array<T>& window, bool is_user,
                            std::vector<Ref>& same_pool,
                            std::vector<Ref>& cross_pool) {
    const int t_own = tp.val(s_own).d0;
    Ref acc = s_own;
    if (flags_.cross) {
      const Array<T>& same_mask = is_user ? sc.masks.user : sc.masks.agent;
      const Array<T>& cross_mask = is_user ? sc.masks.agent : sc.masks.user;
      auto same = layer.cross_attn(tp, s_own, sc.H, rows_of_mask(t_own, same_mask));
      auto cross = layer.cross_attn(tp, s_own, sc.H, rows_of_mask(t_own, cross_mask));
      acc = tp.add(acc, tp.add(same.out, cross.out));
      same_pool.push_back(pool_heads(tp, same.att));
      cross_pool.push_back(pool_heads(tp, cross.att));
    } else {
      auto plain = layer.cross_attn(tp, s_own, sc.H, rows_of_mask(t_own, sc.masks.all));
      acc = tp.add(acc, plain.out);
    }
    if (flags_.self_att) {
      auto role = layer.role_attn(tp, s_own, s_partner, window);
      acc = tp.add(acc, role.out);
    }
    Ref m = layer.ln2(tp, acc);
    return layer.ln3(tp, tp.add(m, layer.ff(tp, m)));
  }

  Ref project_rows(Tape<T>& tp, Ref x, const Side& side) {
    Ref logits = tp.add(tp.matmul(x, tp.param(*side.out_w), false, true),
                        tp.param(*side.out_b));
    Array<T> ones = Array<T>::mat(tp.val(logits).d0, vocab_, T(1));
    return tp.masked_softmax(logits, ones);
  }

  Array<T> row_values(Tape<T>& tp, Ref rows, int t) {
    const Array<T>& rv = tp.val(rows);
    Array<T> out = Array<T>::vec(rv.d1);
    for (int j = 0; j < rv.d1; ++j) out.at(j) = rv.at(t, j);
    return out;
  }
};

}  // namespace ris
