#pragma once

#include <string>
#include <vector>

#include "ris/param.hpp"
#include "ris/tape.hpp"

namespace ris {

// Standard gated recurrent cell; gate order in the packed weight is
// input, forget, candidate, output.
template <typename T>
struct LstmCell {
  Parameter<T>* wx = nullptr;  // [4h x in]
  Parameter<T>* wh = nullptr;  // [4h x h]
  Parameter<T>* b = nullptr;   // [4h]
  int hidden = 0;

  void init(ParamStore<T>& ps, const std::string& prefix, int in_dim, int h_dim,
            Rng& rng) {
    hidden = h_dim;
    wx = &ps.uniform(prefix + ".wx", 4 * h_dim, in_dim, rng);
    wh = &ps.uniform(prefix + ".wh", 4 * h_dim, h_dim, rng);
    b = &ps.zeros_vec(prefix + ".b", 4 * h_dim);
  }

  struct State {
    Ref h, c;
  };

  State zero_state(Tape<T>& tp) const {
    return {tp.constant(Array<T>::vec(hidden)), tp.constant(Array<T>::vec(hidden))};
  }

  State step(Tape<T>& tp, Ref x, const State& prev) const {
    Ref z = tp.add(tp.add(tp.matmul(tp.param(*wx), x), tp.matmul(tp.param(*wh), prev.h)),
                   tp.param(*b));
    Ref i = tp.sigmoid(tp.slice(z, 0, hidden));
    Ref f = tp.sigmoid(tp.slice(z, hidden, 2 * hidden));
    Ref g = tp.tanh_(tp.slice(z, 2 * hidden, 3 * hidden));
    Ref o = tp.sigmoid(tp.slice(z, 3 * hidden, 4 * hidden));
    Ref c = tp.add(tp.mul(f, prev.c), tp.mul(i, g));
    Ref h = tp.mul(o, tp.tanh_(c));
    return {h, c};
  }
};

template <typename T>
struct EncoderOutput {
  Ref H;       // [n x ctx]
  Ref h0, c0;  // decoder initial state (recurrent variant only)
  int n = 0;
  int ctx_dim = 0;
};

// Bidirectional LSTM over the embedded input; context rows are the
// concatenated direction states, and a learned bridge maps the final
// forward / first backward states to the decoder initial state.
template <typename T>
struct BiLstmEncoder {
  LstmCell<T> fwd, bwd;
  Parameter<T>* bridge_h_w = nullptr;
  Parameter<T>* bridge_h_b = nullptr;
  Parameter<T>* bridge_c_w = nullptr;
  Parameter<T>* bridge_c_b = nullptr;
  int hidden = 0;

  void init(ParamStore<T>& ps, const std::string& prefix, int emb_dim, int h_dim,
            Rng& rng) {
    hidden = h_dim;
    fwd.init(ps, prefix + ".fwd", emb_dim, h_dim, rng);
    bwd.init(ps, prefix + ".bwd", emb_dim, h_dim, rng);
    bridge_h_w = &ps.uniform(prefix + ".bridge_h.w", h_dim, 2 * h_dim, rng);
    bridge_h_b = &ps.zeros_vec(prefix + ".bridge_h.b", h_dim);
    bridge_c_w = &ps.uniform(prefix + ".bridge_c.w", h_dim, 2 * h_dim, rng);
    bridge_c_b = &ps.zeros_vec(prefix + ".bridge_c.b", h_dim);
  }

  EncoderOutput<T> encode(Tape<T>& tp, Ref emb_rows /* [n x e] */) const {
    const int n = tp.val(emb_rows).d0;
    RIS_REQUIRE(n >= 1, "bilstm_encode: empty input");
    std::vector<Ref> fh(static_cast<std::size_t>(n));
    std::vector<Ref> bh(static_cast<std::size_t>(n));
    typename LstmCell<T>::State fs = fwd.zero_state(tp);
    for (int t = 0; t < n; ++t) {
      fs = fwd.step(tp, tp.row(emb_rows, t), fs);
      fh[static_cast<std::size_t>(t)] = fs.h;
    }
    typename LstmCell<T>::State bs = bwd.zero_state(tp);
    for (int t = n - 1; t >= 0; --t) {
      bs = bwd.step(tp, tp.row(emb_rows, t), bs);
      bh[static_cast<std::size_t>(t)] = bs.h;
    }
    EncoderOutput<T> out;
    out.n = n;
    out.ctx_dim = 2 * hidden;
    out.H = tp.concat_cols({tp.stack_rows(fh), tp.stack_rows(bh)});
    Ref ends = tp.concat({fh[static_cast<std::size_t>(n - 1)], bh[0]});
    out.h0 = tp.tanh_(tp.affine(ends, tp.param(*bridge_h_w), tp.param(*bridge_h_b)));
    out.c0 = tp.tanh_(tp.affine(ends, tp.param(*bridge_c_w), tp.param(*bridge_c_b)));
    return out;
  }
};

}  // namespace ris
