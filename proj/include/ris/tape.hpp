#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "ris/array.hpp"
#include "ris/common.hpp"
#include "ris/param.hpp"

namespace ris {

// Handle to a node on a Tape.
struct Ref {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over dense arrays. Operations are recorded in
// topological order (inputs always have smaller ids); backward() walks the
// node list in reverse and dispatches on the op kind, so two backward runs
// over the same tape produce bitwise-identical gradients.
//
// Broadcasting is deliberately narrow: two operands must have equal shapes,
// or one of them is a scalar, or a rank-1 [c] vector is broadcast over the
// rows of a rank-2 [r x c] matrix. Anything else is rejected with the
// offending shapes named.
template <typename T>
class Tape {
  enum class Op : std::uint8_t {
    Leaf, Param, Add, Sub, Mul, Min, Scale, MatMul,
    ConcatVec, ConcatCols, StackRows, SliceFlat,
    Sigmoid, Tanh, Exp, Gelu, LogEps,
    SumAll, MeanAll, SumAxis0, MeanAxis0,
    GatherRows, ScatterAdd, MaskedSoftmax, LayerNorm,
  };

  struct Node {
    Op op;
    std::array<int, 3> in{-1, -1, -1};
    int nin = 0;
    int i0 = 0, i1 = 0;      // op-specific ints (slice bounds, flags, sizes)
    T f0 = 0;                // op-specific scalar (scale factor, epsilon)
    std::vector<int> ilist;  // variadic inputs or gather/scatter indices
    Array<T> aux;            // masks
    Array<T> value;          // empty for Param nodes, which alias the Parameter
    Array<T> grad;
    Parameter<T>* pptr = nullptr;
  };

 public:
  Tape() { nodes_.reserve(1024); }

  int size() const { return static_cast<int>(nodes_.size()); }

  void clear() { nodes_.clear(); }

  const Array<T>& val(Ref r) const {
    const Node& n = node(r);
    return n.pptr ? n.pptr->value : n.value;
  }

  const Array<T>& grad(Ref r) const { return node(r).grad; }

  // ---- leaves ----------------------------------------------------------

  Ref constant(Array<T> v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return push(std::move(n));
  }

  Ref scalar(T x) { return constant(Array<T>::scalar(x)); }

  Ref param(Parameter<T>& p) {
    Node n;
    n.op = Op::Param;
    n.pptr = &p;
    return push(std::move(n));
  }

  // ---- arithmetic ------------------------------------------------------

  Ref add(Ref a, Ref b) { return binary(Op::Add, a, b); }
  Ref sub(Ref a, Ref b) { return binary(Op::Sub, a, b); }
  Ref mul(Ref a, Ref b) { return binary(Op::Mul, a, b); }

  Ref min_ew(Ref a, Ref b) {
    const Array<T>& av = val(a);
    const Array<T>& bv = val(b);
    RIS_REQUIRE(av.same_shape(bv), "min: shape mismatch " << av.shape_str()
                                                          << " vs " << bv.shape_str());
    Node n;
    n.op = Op::Min;
    n.in = {a.id, b.id, -1};
    n.nin = 2;
    n.value = av;
    for (int i = 0; i < av.numel(); ++i) n.value.at(i) = std::min(av.at(i), bv.at(i));
    return push(std::move(n));
  }

  Ref scale(Ref a, T c) {
    Node n;
    n.op = Op::Scale;
    n.in = {a.id, -1, -1};
    n.nin = 1;
    n.f0 = c;
    n.value = val(a);
    for (auto& x : n.value.v) x *= c;
    return push(std::move(n));
  }

  // C = op(A, ta) * op(B, tb). Rank-1 operands are treated as a row vector
  // on the left and a column vector on the right; the singleton extent is
  // squeezed from the result.
  Ref matmul(Ref a, Ref b, bool ta = false, bool tb = false) {
    const Array<T>& av = val(a);
    const Array<T>& bv = val(b);
    RIS_REQUIRE(av.rank == 2 || !ta, "matmul: cannot transpose rank-1 lhs");
    RIS_REQUIRE(bv.rank == 2 || !tb, "matmul: cannot transpose rank-1 rhs");
    const int ar = av.rank == 1 ? 1 : (ta ? av.d1 : av.d0);
    const int ac = av.rank == 1 ? av.d0 : (ta ? av.d0 : av.d1);
    const int br = bv.rank == 1 ? bv.d0 : (tb ? bv.d1 : bv.d0);
    const int bc = bv.rank == 1 ? 1 : (tb ? bv.d0 : bv.d1);
    RIS_REQUIRE(ac == br, "matmul: inner extents differ, " << av.shape_str()
                          << (ta ? "^T" : "") << " * " << bv.shape_str()
                          << (tb ? "^T" : ""));
    Node n;
    n.op = Op::MatMul;
    n.in = {a.id, b.id, -1};
    n.nin = 2;
    n.i0 = (ta ? 1 : 0) | (tb ? 2 : 0);
    const bool sq_rows = av.rank == 1;
    const bool sq_cols = bv.rank == 1;
    if (sq_rows && sq_cols) n.value = Array<T>::scalar(0);
    else if (sq_rows) n.value = Array<T>::vec(bc);
    else if (sq_cols) n.value = Array<T>::vec(ar);
    else n.value = Array<T>::mat(ar, bc);
    mm_acc(av.v.data(), av.rank == 1 ? 1 : av.d0, av.rank == 1 ? av.d0 : av.d1, ta,
           bv.v.data(), bv.rank == 1 ? bv.d0 : bv.d0, bv.rank == 1 ? 1 : bv.d1, tb,
           n.value.v.data(), ar, bc);
    return push(std::move(n));
  }

  // ---- shape ops -------------------------------------------------------

  Ref concat(const std::vector<Ref>& parts) {
    RIS_REQUIRE(!parts.empty(), "concat: no inputs");
    int total = 0;
    for (Ref p : parts) {
      RIS_REQUIRE(val(p).rank == 1, "concat: rank-1 inputs only, got "
                                        << val(p).shape_str());
      total += val(p).d0;
    }
    Node n;
    n.op = Op::ConcatVec;
    n.value = Array<T>::vec(total);
    int off = 0;
    for (Ref p : parts) {
      n.ilist.push_back(p.id);
      const Array<T>& pv = val(p);
      std::copy(pv.v.begin(), pv.v.end(), n.value.v.begin() + off);
      off += pv.d0;
    }
    return push(std::move(n));
  }

  Ref concat_cols(const std::vector<Ref>& parts) {
    RIS_REQUIRE(!parts.empty(), "concat_cols: no inputs");
    const int rows = val(parts[0]).d0;
    int cols = 0;
    for (Ref p : parts) {
      const Array<T>& pv = val(p);
      RIS_REQUIRE(pv.rank == 2 && pv.d0 == rows,
                  "concat_cols: row mismatch " << pv.shape_str());
      cols += pv.d1;
    }
    Node n;
    n.op = Op::ConcatCols;
    n.value = Array<T>::mat(rows, cols);
    int off = 0;
    for (Ref p : parts) {
      n.ilist.push_back(p.id);
      const Array<T>& pv = val(p);
      for (int i = 0; i < rows; ++i)
        std::copy(pv.v.begin() + static_cast<std::size_t>(i) * pv.d1,
                  pv.v.begin() + static_cast<std::size_t>(i + 1) * pv.d1,
                  n.value.v.begin() + static_cast<std::size_t>(i) * cols + off);
      off += pv.d1;
    }
    return push(std::move(n));
  }

  Ref stack_rows(const std::vector<Ref>& rows) {
    RIS_REQUIRE(!rows.empty(), "stack_rows: no inputs");
    const int cols = val(rows[0]).d0;
    Node n;
    n.op = Op::StackRows;
    n.value = Array<T>::mat(static_cast<int>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Array<T>& rv = val(rows[i]);
      RIS_REQUIRE(rv.rank == 1 && rv.d0 == cols,
                  "stack_rows: row " << i << " has shape " << rv.shape_str());
      n.ilist.push_back(rows[i].id);
      std::copy(rv.v.begin(), rv.v.end(),
                n.value.v.begin() + static_cast<std::size_t>(i) * cols);
    }
    return push(std::move(n));
  }

  // Contiguous slice of the flat buffer; rows of a row-major matrix are
  // contiguous, so row(x, i) is slice(x, i*cols, (i+1)*cols).
  Ref slice(Ref a, int lo, int hi) {
    const Array<T>& av = val(a);
    RIS_REQUIRE(0 <= lo && lo < hi && hi <= av.numel(),
                "slice [" << lo << "," << hi << ") out of range for "
                          << av.shape_str());
    Node n;
    n.op = Op::SliceFlat;
    n.in = {a.id, -1, -1};
    n.nin = 1;
    n.i0 = lo;
    n.i1 = hi;
    n.value = Array<T>::vec(hi - lo);
    std::copy(av.v.begin() + lo, av.v.begin() + hi, n.value.v.begin());
    return push(std::move(n));
  }

  Ref row(Ref a, int i) {
    const Array<T>& av = val(a);
    RIS_REQUIRE(av.rank == 2 && i >= 0 && i < av.d0,
                "row " << i << " out of range for " << av.shape_str());
    return slice(a, i * av.d1, (i + 1) * av.d1);
  }

  // ---- elementwise nonlinearities ---------------------------------------

  Ref sigmoid(Ref a) { return unary(Op::Sigmoid, a); }
  Ref tanh_(Ref a) { return unary(Op::Tanh, a); }
  Ref exp_(Ref a) { return unary(Op::Exp, a); }
  // Exact erf-based GELU; smooth, so finite-difference checks stay clean.
  Ref gelu(Ref a) { return unary(Op::Gelu, a); }

  // log(max(x, eps)); the floor keeps one-hot distributions out of -inf.
  Ref log_eps(Ref a, T eps = T(1e-10)) {
    RIS_REQUIRE(eps > 0, "log_eps: eps must be positive");
    Node n;
    n.op = Op::LogEps;
    n.in = {a.id, -1, -1};
    n.nin = 1;
    n.f0 = eps;
    n.value = val(a);
    for (auto& x : n.value.v) x = std::log(std::max(x, eps));
    return push(std::move(n));
  }

  // ---- reductions ------------------------------------------------------

  Ref sum_all(Ref a) {
    Node n;
    n.op = Op::SumAll;
    n.in = {a.id, -1, -1};
    n.nin = 1;
    n.value = Array<T>::scalar(val(a).sum());
    return push(std::move(n));
  }

  Ref mean_all(Ref a) {
    Node n;
    n.op = Op::MeanAll;
    n.in = {a.id, -1, -1};
    n.nin = 1;
    n.value = Array<T>::scalar(val(a).sum() / static_cast<T>(val(a).numel()));
    return push(std::move(n));
  }

  Ref sum_axis0(Ref a) { return axis0(Op::SumAxis0, a); }
  Ref mean_axis0(Ref a) { return axis0(Op::MeanAxis0, a); }

  // ---- indexing --------------------------------------------------------

  Ref gather_rows(Ref table, const std::vector<int>& ids) {
    const Array<T>& tv = val(table);
    RIS_REQUIRE(tv.rank == 2, "gather_rows: table must be rank 2, got "
                                  << tv.shape_str());
    Node n;
    n.op = Op::GatherRows;
    n.in = {table.id, -1, -1};
    n.nin = 1;
    n.ilist = ids;
    n.value = Array<T>::mat(static_cast<int>(ids.size()), tv.d1);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      RIS_REQUIRE(ids[i] >= 0 && ids[i] < tv.d0,
                  "gather_rows: id " << ids[i] << " out of range for "
                                     << tv.shape_str());
      std::copy(tv.v.begin() + static_cast<std::size_t>(ids[i]) * tv.d1,
                tv.v.begin() + static_cast<std::size_t>(ids[i] + 1) * tv.d1,
                n.value.v.begin() + i * tv.d1);
    }
    return push(std::move(n));
  }

  // out[ids[i]] += src[i]; duplicates in ids accumulate.
  Ref scatter_add(Ref src, const std::vector<int>& ids, int out_size) {
    const Array<T>& sv = val(src);
    RIS_REQUIRE(sv.rank == 1 && static_cast<std::size_t>(sv.d0) == ids.size(),
                "scatter_add: src " << sv.shape_str() << " vs " << ids.size()
                                    << " ids");
    Node n;
    n.op = Op::ScatterAdd;
    n.in = {src.id, -1, -1};
    n.nin = 1;
    n.ilist = ids;
    n.i0 = out_size;
    n.value = Array<T>::vec(out_size);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      RIS_REQUIRE(ids[i] >= 0 && ids[i] < out_size,
                  "scatter_add: id " << ids[i] << " out of range " << out_size);
      n.value.at(ids[i]) += sv.at(static_cast<int>(i));
    }
    return push(std::move(n));
  }

  // ---- softmax / layer norm ---------------------------------------------

  // Row-wise softmax restricted to mask==1 positions; exact zeros elsewhere.
  // Stable via max subtraction. A row whose mask is all zero is rejected:
  // it signals an example with no tokens for a role.
  Ref masked_softmax(Ref logits, const Array<T>& mask) {
    const Array<T>& lv = val(logits);
    RIS_REQUIRE(lv.same_shape(mask), "masked_softmax: logits "
                                         << lv.shape_str() << " vs mask "
                                         << mask.shape_str());
    Node n;
    n.op = Op::MaskedSoftmax;
    n.in = {logits.id, -1, -1};
    n.nin = 1;
    n.aux = mask;
    n.value = lv;
    const int rows = lv.rank == 2 ? lv.d0 : 1;
    const int cols = lv.rank == 2 ? lv.d1 : lv.d0;
    for (int r = 0; r < rows; ++r) {
      const T* x = lv.v.data() + static_cast<std::size_t>(r) * cols;
      const T* m = mask.v.data() + static_cast<std::size_t>(r) * cols;
      T* out = n.value.v.data() + static_cast<std::size_t>(r) * cols;
      bool any_in = false;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < cols; ++j) {
        if (m[j] == T(0)) continue;
        any_in = true;
        mx = std::max(mx, x[j]);
      }
      if (!any_in) {
        throw ValidationError("masked_softmax: all-zero mask row " +
                              std::to_string(r));
      }
      if (!std::isfinite(mx)) {
        // Non-finite logits flow through as NaN so a diverged loss is
        // visible to the caller instead of a misleading mask error.
        for (int j = 0; j < cols; ++j)
          out[j] = std::numeric_limits<T>::quiet_NaN();
        continue;
      }
      T s = 0;
      for (int j = 0; j < cols; ++j) {
        out[j] = m[j] != T(0) ? std::exp(x[j] - mx) : T(0);
        s += out[j];
      }
      for (int j = 0; j < cols; ++j) out[j] /= s;
    }
    return push(std::move(n));
  }

  Ref softmax(Ref logits) {
    const Array<T>& lv = val(logits);
    Array<T> ones = lv;
    std::fill(ones.v.begin(), ones.v.end(), T(1));
    return masked_softmax(logits, ones);
  }

  // y = gain .* (x - mean) / sqrt(var + eps) + bias, per row.
  Ref layer_norm(Ref x, Ref gain, Ref bias, T eps = T(1e-5)) {
    const Array<T>& xv = val(x);
    const Array<T>& gv = val(gain);
    const Array<T>& bv = val(bias);
    const int cols = xv.rank == 2 ? xv.d1 : xv.d0;
    RIS_REQUIRE(gv.rank == 1 && gv.d0 == cols && bv.rank == 1 && bv.d0 == cols,
                "layer_norm: gain/bias " << gv.shape_str() << "/"
                                         << bv.shape_str() << " vs x "
                                         << xv.shape_str());
    Node n;
    n.op = Op::LayerNorm;
    n.in = {x.id, gain.id, bias.id};
    n.nin = 3;
    n.f0 = eps;
    n.value = xv;
    const int rows = xv.rank == 2 ? xv.d0 : 1;
    for (int r = 0; r < rows; ++r) {
      const T* xi = xv.v.data() + static_cast<std::size_t>(r) * cols;
      T* out = n.value.v.data() + static_cast<std::size_t>(r) * cols;
      T mu = 0;
      for (int j = 0; j < cols; ++j) mu += xi[j];
      mu /= cols;
      T var = 0;
      for (int j = 0; j < cols; ++j) var += (xi[j] - mu) * (xi[j] - mu);
      var /= cols;
      const T inv = T(1) / std::sqrt(var + eps);
      for (int j = 0; j < cols; ++j)
        out[j] = gv.at(j) * (xi[j] - mu) * inv + bv.at(j);
    }
    return push(std::move(n));
  }

  // ---- composite helpers -------------------------------------------------

  Ref dot(Ref a, Ref b) { return sum_all(mul(a, b)); }

  Ref one_minus(Ref a) { return sub(scalar(T(1)), a); }

  Ref affine(Ref x, Ref w, Ref b) { return add(matmul(w, x), b); }

  // ---- backward ----------------------------------------------------------

  void backward(Ref loss) {
    RIS_REQUIRE(loss.valid() && loss.id < size(), "backward: invalid loss ref");
    RIS_REQUIRE(val(loss).numel() == 1,
                "backward: loss must be scalar, got " << val(loss).shape_str());
    for (int i = 0; i <= loss.id; ++i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      const Array<T>& v = n.pptr ? n.pptr->value : n.value;
      n.grad = v;
      std::fill(n.grad.v.begin(), n.grad.v.end(), T(0));
    }
    nodes_[static_cast<std::size_t>(loss.id)].grad.at(0) = T(1);
    for (int i = loss.id; i >= 0; --i) backward_node(i);
    for (int i = 0; i <= loss.id; ++i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.pptr) continue;
      for (std::size_t k = 0; k < n.grad.v.size(); ++k)
        n.pptr->grad.v[k] += n.grad.v[k];
    }
  }

 private:
  std::vector<Node> nodes_;

  const Node& node(Ref r) const {
    RIS_REQUIRE(r.valid() && r.id < size(), "invalid node ref " << r.id);
    return nodes_[static_cast<std::size_t>(r.id)];
  }

  Ref push(Node n) {
    nodes_.push_back(std::move(n));
    return Ref{static_cast<int>(nodes_.size()) - 1};
  }

  const Array<T>& val_id(int id) const { return val(Ref{id}); }

  // Broadcast case codes for Add/Sub/Mul.
  enum { kSame = 0, kAScalar = 1, kBScalar = 2, kARow = 3, kBRow = 4 };

  static int broadcast_case(const Array<T>& a, const Array<T>& b) {
    if (a.same_shape(b)) return kSame;
    if (a.is_scalar()) return kAScalar;
    if (b.is_scalar()) return kBScalar;
    if (a.rank == 1 && b.rank == 2 && a.d0 == b.d1) return kARow;
    if (b.rank == 1 && a.rank == 2 && b.d0 == a.d1) return kBRow;
    return -1;
  }

  Ref binary(Op op, Ref a, Ref b) {
    const Array<T>& av = val(a);
    const Array<T>& bv = val(b);
    const int bc = broadcast_case(av, bv);
    RIS_REQUIRE(bc >= 0, op_name(op) << ": incompatible shapes "
                                     << av.shape_str() << " vs "
                                     << bv.shape_str());
    Node n;
    n.op = op;
    n.in = {a.id, b.id, -1};
    n.nin = 2;
    n.i0 = bc;
    const Array<T>& big = (bc == kAScalar || bc == kARow) ? bv : av;
    n.value = big;
    const int rows = big.rank == 2 ? big.d0 : 1;
    const int cols = big.rank == 2 ? big.d1 : big.d0;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * cols + c;
        const T x = read_bc(av, bc == kAScalar, bc == kARow, k, c);
        const T y = read_bc(bv, bc == kBScalar, bc == kBRow, k, c);
        T z;
        switch (op) {
          case Op::Add: z = x + y; break;
          case Op::Sub: z = x - y; break;
          default: z = x * y; break;
        }
        n.value.v[k] = z;
      }
    }
    return push(std::move(n));
  }

  static T read_bc(const Array<T>& a, bool is_scalar, bool is_row,
                   std::size_t flat, int col) {
    if (is_scalar) return a.v[0];
    if (is_row) return a.v[static_cast<std::size_t>(col)];
    return a.v[flat];
  }

  Ref unary(Op op, Ref a) {
    Node n;
    n.op = op;
    n.in = {a.id, -1, -1};
    n.nin = 1;
    n.value = val(a);
    for (auto& x : n.value.v) {
      switch (op) {
        case Op::Sigmoid: x = T(1) / (T(1) + std::exp(-x)); break;
        case Op::Tanh: x = std::tanh(x); break;
        case Op::Gelu: x = x * normal_cdf(x); break;
        default: x = std::exp(x); break;
      }
    }
    return push(std::move(n));
  }

  Ref axis0(Op op, Ref a) {
    const Array<T>& av = val(a);
    RIS_REQUIRE(av.rank == 2, op_name(op) << ": rank-2 input required, got "
                                          << av.shape_str());
    Node n;
    n.op = op;
    n.in = {a.id, -1, -1};
    n.nin = 1;
    n.value = Array<T>::vec(av.d1);
    for (int i = 0; i < av.d0; ++i)
      for (int j = 0; j < av.d1; ++j) n.value.at(j) += av.at(i, j);
    if (op == Op::MeanAxis0)
      for (auto& x : n.value.v) x /= static_cast<T>(av.d0);
    return push(std::move(n));
  }

  static T normal_cdf(T x) {
    return T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::Add: return "add";
      case Op::Sub: return "sub";
      case Op::Mul: return "mul";
      case Op::SumAxis0: return "sum_axis0";
      case Op::MeanAxis0: return "mean_axis0";
      default: return "op";
    }
  }

  // G[gr x gc] += op(X, tx) * op(Y, ty), raw buffers.
  static void mm_acc(const T* x, int xr, int xc, bool tx, const T* y, int yr,
                     int yc, bool ty, T* g, int gr, int gc) {
    (void)yr;
    const int inner = tx ? xr : xc;
    for (int i = 0; i < gr; ++i) {
      for (int k = 0; k < inner; ++k) {
        const T xv = tx ? x[static_cast<std::size_t>(k) * xc + i]
                        : x[static_cast<std::size_t>(i) * xc + k];
        if (xv == T(0)) continue;
        const T* yrow = ty ? nullptr : y + static_cast<std::size_t>(k) * yc;
        T* grow = g + static_cast<std::size_t>(i) * gc;
        if (!ty) {
          for (int j = 0; j < gc; ++j) grow[j] += xv * yrow[j];
        } else {
          for (int j = 0; j < gc; ++j)
            grow[j] += xv * y[static_cast<std::size_t>(j) * yc + k];
        }
      }
    }
  }

  void backward_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Array<T>& d = n.grad;
    switch (n.op) {
      case Op::Leaf:
      case Op::Param:
        break;
      case Op::Add:
      case Op::Sub: {
        const T sgn = n.op == Op::Sub ? T(-1) : T(1);
        acc_bc(n.in[0], d, n.i0 == kAScalar, n.i0 == kARow, T(1));
        acc_bc(n.in[1], d, n.i0 == kBScalar, n.i0 == kBRow, sgn);
        break;
      }
      case Op::Mul: {
        const Array<T>& av = val_id(n.in[0]);
        const Array<T>& bv = val_id(n.in[1]);
        acc_bc_scaled(n.in[0], d, bv, n.i0 == kAScalar, n.i0 == kARow,
                      n.i0 == kBScalar, n.i0 == kBRow);
        acc_bc_scaled(n.in[1], d, av, n.i0 == kBScalar, n.i0 == kBRow,
                      n.i0 == kAScalar, n.i0 == kARow);
        break;
      }
      case Op::Min: {
        const Array<T>& av = val_id(n.in[0]);
        const Array<T>& bv = val_id(n.in[1]);
        Array<T>& ga = nodes_[n.in[0]].grad;
        Array<T>& gb = nodes_[n.in[1]].grad;
        for (int i = 0; i < d.numel(); ++i) {
          if (av.at(i) <= bv.at(i)) ga.at(i) += d.at(i);
          else gb.at(i) += d.at(i);
        }
        break;
      }
      case Op::Scale: {
        Array<T>& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < d.numel(); ++i) ga.at(i) += n.f0 * d.at(i);
        break;
      }
      case Op::MatMul: {
        const bool ta = n.i0 & 1, tb = n.i0 & 2;
        const Array<T>& av = val_id(n.in[0]);
        const Array<T>& bv = val_id(n.in[1]);
        const int asr = av.rank == 1 ? 1 : av.d0;
        const int asc = av.rank == 1 ? av.d0 : av.d1;
        const int bsr = bv.rank == 1 ? bv.d0 : bv.d0;
        const int bsc = bv.rank == 1 ? 1 : bv.d1;
        const int ar = ta ? asc : asr;
        const int bc = tb ? bsr : bsc;
        Array<T>& ga = nodes_[n.in[0]].grad;
        Array<T>& gb = nodes_[n.in[1]].grad;
        // dA
        if (!ta)
          mm_acc(d.v.data(), ar, bc, false, bv.v.data(), bsr, bsc, !tb,
                 ga.v.data(), asr, asc);
        else
          mm_acc(bv.v.data(), bsr, bsc, tb, d.v.data(), ar, bc, true,
                 ga.v.data(), asr, asc);
        // dB
        if (!tb)
          mm_acc(av.v.data(), asr, asc, !ta, d.v.data(), ar, bc, false,
                 gb.v.data(), bsr, bsc);
        else
          mm_acc(d.v.data(), ar, bc, true, av.v.data(), asr, asc, ta,
                 gb.v.data(), bsr, bsc);
        break;
      }
      case Op::ConcatVec: {
        int off = 0;
        for (int pid : n.ilist) {
          Array<T>& gp = nodes_[pid].grad;
          for (int i = 0; i < gp.numel(); ++i) gp.at(i) += d.at(off + i);
          off += gp.numel();
        }
        break;
      }
      case Op::ConcatCols: {
        int off = 0;
        const int cols = n.value.d1;
        for (int pid : n.ilist) {
          Array<T>& gp = nodes_[pid].grad;
          for (int i = 0; i < gp.d0; ++i)
            for (int j = 0; j < gp.d1; ++j)
              gp.at(i, j) += d.v[static_cast<std::size_t>(i) * cols + off + j];
          off += gp.d1;
        }
        break;
      }
      case Op::StackRows: {
        const int cols = n.value.d1;
        for (std::size_t i = 0; i < n.ilist.size(); ++i) {
          Array<T>& gp = nodes_[n.ilist[i]].grad;
          for (int j = 0; j < cols; ++j)
            gp.at(j) += d.v[i * cols + j];
        }
        break;
      }
      case Op::SliceFlat: {
        Array<T>& ga = nodes_[n.in[0]].grad;
        for (int i = n.i0; i < n.i1; ++i) ga.v[i] += d.at(i - n.i0);
        break;
      }
      case Op::Sigmoid: {
        Array<T>& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < d.numel(); ++i) {
          const T s = n.value.at(i);
          ga.at(i) += d.at(i) * s * (T(1) - s);
        }
        break;
      }
      case Op::Tanh: {
        Array<T>& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < d.numel(); ++i) {
          const T t = n.value.at(i);
          ga.at(i) += d.at(i) * (T(1) - t * t);
        }
        break;
      }
      case Op::Exp: {
        Array<T>& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < d.numel(); ++i) ga.at(i) += d.at(i) * n.value.at(i);
        break;
      }
      case Op::Gelu: {
        const Array<T>& av = val_id(n.in[0]);
        Array<T>& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < d.numel(); ++i) {
          const T x = av.at(i);
          const T pdf = std::exp(T(-0.5) * x * x) *
                        T(0.3989422804014326779);  // 1/sqrt(2*pi)
          ga.at(i) += d.at(i) * (normal_cdf(x) + x * pdf);
        }
        break;
      }
      case Op::LogEps: {
        const Array<T>& av = val_id(n.in[0]);
        Array<T>& ga = nodes_[n.in[0]].grad;
        for (int i = 0; i < d.numel(); ++i)
          if (av.at(i) > n.f0) ga.at(i) += d.at(i) / av.at(i);
        break;
      }
      case Op::SumAll: {
        Array<T>& ga = nodes_[n.in[0]].grad;
        for (auto& x : ga.v) x += d.at(0);
        break;
      }
      case Op::MeanAll: {
        Array<T>& ga = nodes_[n.in[0]].grad;
        const T s = d.at(0) / static_cast<T>(ga.numel());
        for (auto& x : ga.v) x += s;
        break;
      }
      case Op::SumAxis0:
      case Op::MeanAxis0: {
        Array<T>& ga = nodes_[n.in[0]].grad;
        const T s = n.op == Op::MeanAxis0 ? T(1) / static_cast<T>(ga.d0) : T(1);
        for (int i = 0; i < ga.d0; ++i)
          for (int j = 0; j < ga.d1; ++j) ga.at(i, j) += s * d.at(j);
        break;
      }
      case Op::GatherRows: {
        Array<T>& gt = nodes_[n.in[0]].grad;
        const int cols = gt.d1;
        for (std::size_t i = 0; i < n.ilist.size(); ++i)
          for (int j = 0; j < cols; ++j)
            gt.at(n.ilist[i], j) += d.v[i * cols + j];
        break;
      }
      case Op::ScatterAdd: {
        Array<T>& gs = nodes_[n.in[0]].grad;
        for (std::size_t i = 0; i < n.ilist.size(); ++i)
          gs.at(static_cast<int>(i)) += d.at(n.ilist[i]);
        break;
      }
      case Op::MaskedSoftmax: {
        Array<T>& ga = nodes_[n.in[0]].grad;
        const int rows = n.value.rank == 2 ? n.value.d0 : 1;
        const int cols = n.value.rank == 2 ? n.value.d1 : n.value.d0;
        for (int r = 0; r < rows; ++r) {
          const T* p = n.value.v.data() + static_cast<std::size_t>(r) * cols;
          const T* dd = d.v.data() + static_cast<std::size_t>(r) * cols;
          T* g = ga.v.data() + static_cast<std::size_t>(r) * cols;
          T dp = 0;
          for (int j = 0; j < cols; ++j) dp += dd[j] * p[j];
          for (int j = 0; j < cols; ++j) g[j] += p[j] * (dd[j] - dp);
        }
        break;
      }
      case Op::LayerNorm: {
        const Array<T>& xv = val_id(n.in[0]);
        const Array<T>& gv = val_id(n.in[1]);
        Array<T>& gx = nodes_[n.in[0]].grad;
        Array<T>& gg = nodes_[n.in[1]].grad;
        Array<T>& gb = nodes_[n.in[2]].grad;
        const int rows = xv.rank == 2 ? xv.d0 : 1;
        const int cols = xv.rank == 2 ? xv.d1 : xv.d0;
        for (int r = 0; r < rows; ++r) {
          const T* xi = xv.v.data() + static_cast<std::size_t>(r) * cols;
          const T* dd = d.v.data() + static_cast<std::size_t>(r) * cols;
          T* gxr = gx.v.data() + static_cast<std::size_t>(r) * cols;
          T mu = 0;
          for (int j = 0; j < cols; ++j) mu += xi[j];
          mu /= cols;
          T var = 0;
          for (int j = 0; j < cols; ++j) var += (xi[j] - mu) * (xi[j] - mu);
          var /= cols;
          const T inv = T(1) / std::sqrt(var + n.f0);
          T mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (int j = 0; j < cols; ++j) {
            const T xhat = (xi[j] - mu) * inv;
            const T dxhat = dd[j] * gv.at(j);
            gg.at(j) += dd[j] * xhat;
            gb.at(j) += dd[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
          }
          mean_dxhat /= cols;
          mean_dxhat_xhat /= cols;
          for (int j = 0; j < cols; ++j) {
            const T xhat = (xi[j] - mu) * inv;
            const T dxhat = dd[j] * gv.at(j);
            gxr[j] += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
          }
        }
        break;
      }
    }
  }

  void acc_bc(int id, const Array<T>& d, bool to_scalar, bool to_row, T sgn) {
    Array<T>& g = nodes_[id].grad;
    if (to_scalar) {
      T s = 0;
      for (T x : d.v) s += x;
      g.at(0) += sgn * s;
    } else if (to_row) {
      const int rows = d.d0, cols = d.d1;
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) g.at(j) += sgn * d.at(i, j);
    } else {
      for (int i = 0; i < d.numel(); ++i) g.at(i) += sgn * d.at(i);
    }
  }

  // For Mul: grad of one operand is d .* (other operand broadcast), reduced
  // back onto the operand's own shape.
  void acc_bc_scaled(int id, const Array<T>& d, const Array<T>& other,
                     bool self_scalar, bool self_row, bool other_scalar,
                     bool other_row) {
    Array<T>& g = nodes_[id].grad;
    const int rows = d.rank == 2 ? d.d0 : 1;
    const int cols = d.rank == 2 ? d.d1 : d.d0;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * cols + c;
        const T ov = read_bc(other, other_scalar, other_row, k, c);
        const T contrib = d.v[k] * ov;
        if (self_scalar) g.at(0) += contrib;
        else if (self_row) g.at(c) += contrib;
        else g.v[k] += contrib;
      }
    }
  }
};

// KL(p || q) over two distributions recorded on the tape. Both must sum to
// one; q is floored by eps before the log so one-hot attention cannot
// produce infinities. Gradient flows to both arguments.
template <typename T>
Ref kl_divergence(Tape<T>& tp, Ref p, Ref q, T eps = T(1e-10)) {
  const Array<T>& pv = tp.val(p);
  const Array<T>& qv = tp.val(q);
  RIS_REQUIRE(pv.same_shape(qv), "kl_divergence: shape mismatch "
                                     << pv.shape_str() << " vs "
                                     << qv.shape_str());
  const double ps = static_cast<double>(pv.sum());
  const double qs = static_cast<double>(qv.sum());
  RIS_VALIDATE(std::abs(ps - 1.0) <= 1e-6 && std::abs(qs - 1.0) <= 1e-6,
               "kl_divergence: inputs must be normalized, sums are "
                   << ps << " and " << qs);
  return tp.sum_all(tp.mul(p, tp.sub(tp.log_eps(p, eps), tp.log_eps(q, eps))));
}

}  // namespace ris
