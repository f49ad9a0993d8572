#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ris/gradcheck.hpp"
#include "ris/rng.hpp"
#include "ris/tape.hpp"

using ris::Array;
using ris::Arrayd;
using ris::ParamStore;
using ris::Ref;
using ris::Rng;
using ris::Tape;

namespace {

Arrayd random_vec(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Arrayd a = Arrayd::vec(n);
  for (auto& x : a.v) x = rng.uniform(lo, hi);
  return a;
}

Arrayd random_mat(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Arrayd a = Arrayd::mat(r, c);
  for (auto& x : a.v) x = rng.uniform(lo, hi);
  return a;
}

// Finite-difference oracle for a scalar function of registered parameters.
template <typename Build>
double fd_worst(ParamStore<double>& ps, Build&& build, double eps = 1e-5) {
  auto fwd = [&](bool with_grad) {
    Tape<double> tp;
    Ref loss = build(tp);
    const double v = tp.val(loss).at(0);
    if (with_grad) tp.backward(loss);
    return v;
  };
  return ris::check_gradients<double>(fwd, ps, eps).worst;
}

}  // namespace

TEST_CASE("matmul identity") {
  Tape<double> tp;
  Arrayd eye = Arrayd::mat(3, 3);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Rng rng(1);
  Arrayd a = random_mat(3, 4, rng);
  Ref c = tp.matmul(tp.constant(eye), tp.constant(a));
  for (int i = 0; i < a.numel(); ++i) CHECK(tp.val(c).at(i) == doctest::Approx(a.at(i)));
}

TEST_CASE("sigmoid at zero") {
  Tape<double> tp;
  Ref s = tp.sigmoid(tp.scalar(0.0));
  CHECK(tp.val(s).at(0) == doctest::Approx(0.5));
}

TEST_CASE("elementwise and broadcast gradients match finite differences") {
  Rng rng(7);
  ParamStore<double> ps;
  auto& a = ps.create("a", random_mat(3, 4, rng));
  auto& b = ps.create("b", random_mat(3, 4, rng));
  auto& v = ps.create("v", random_vec(4, rng));
  auto& s = ps.create("s", Arrayd::scalar(0.37));
  (void)a; (void)b; (void)v; (void)s;

  double worst = fd_worst(ps, [&](Tape<double>& tp) {
    Ref ra = tp.param(a), rb = tp.param(b), rv = tp.param(v), rs = tp.param(s);
    Ref t1 = tp.mul(tp.add(ra, rv), tp.sub(rb, rs));   // row and scalar broadcast
    Ref t2 = tp.add(tp.mul(rs, ra), tp.min_ew(ra, rb));
    Ref t3 = tp.scale(tp.mul(rv, rv), 0.5);
    return tp.add(tp.sum_all(t1), tp.add(tp.sum_all(t2), tp.sum_all(t3)));
  });
  CHECK(worst < 1e-5);
}

TEST_CASE("matmul gradients, all transpose and vector forms") {
  Rng rng(11);
  ParamStore<double> ps;
  auto& a = ps.create("a", random_mat(3, 4, rng));
  auto& b = ps.create("b", random_mat(4, 2, rng));
  auto& bt = ps.create("bt", random_mat(2, 4, rng));
  auto& at = ps.create("at", random_mat(4, 3, rng));
  auto& x = ps.create("x", random_vec(4, rng));
  auto& y = ps.create("y", random_vec(3, rng));

  double worst = fd_worst(ps, [&](Tape<double>& tp) {
    Ref ra = tp.param(a), rb = tp.param(b), rbt = tp.param(bt), rat = tp.param(at);
    Ref rx = tp.param(x), ry = tp.param(y);
    Ref c1 = tp.matmul(ra, rb);                 // plain
    Ref c2 = tp.matmul(ra, rbt, false, true);   // B transposed
    Ref c3 = tp.matmul(rat, rb, true, false);   // A transposed
    Ref c4 = tp.matmul(rat, rbt, true, true);   // both
    Ref mv = tp.matmul(ra, rx);                 // mat * vec
    Ref vm = tp.matmul(ry, ra);                 // vec * mat
    Ref vv = tp.matmul(rx, rx);                 // inner product
    Ref acc = tp.add(tp.sum_all(c1), tp.add(tp.sum_all(c2), tp.sum_all(c3)));
    acc = tp.add(acc, tp.sum_all(c4));
    acc = tp.add(acc, tp.add(tp.sum_all(mv), tp.sum_all(vm)));
    return tp.add(acc, vv);
  });
  CHECK(worst < 1e-5);
}

TEST_CASE("shape, slice, gather, scatter gradients") {
  Rng rng(13);
  ParamStore<double> ps;
  auto& e = ps.create("emb", random_mat(6, 3, rng));
  auto& u = ps.create("u", random_vec(5, rng));
  auto& w = ps.create("w", random_vec(3, rng));

  double worst = fd_worst(ps, [&](Tape<double>& tp) {
    Ref re = tp.param(e), ru = tp.param(u), rw = tp.param(w);
    Ref g = tp.gather_rows(re, {4, 0, 4, 2});            // repeated id
    Ref srow = tp.row(g, 1);
    Ref cat = tp.concat({srow, tp.slice(ru, 1, 4)});
    Ref stk = tp.stack_rows({srow, rw, srow});
    Ref g2 = tp.gather_rows(re, {1, 5, 3});
    Ref cc = tp.concat_cols({stk, g2});
    Ref sc = tp.scatter_add(ru, {2, 0, 2, 1, 0}, 4);
    Ref t = tp.add(tp.sum_all(g), tp.sum_all(cat));
    t = tp.add(t, tp.mean_all(stk));
    t = tp.add(t, tp.sum_all(tp.mul(cc, cc)));
    return tp.add(t, tp.sum_all(sc));
  });
  CHECK(worst < 1e-5);
}

TEST_CASE("nonlinearity and reduction gradients") {
  Rng rng(17);
  ParamStore<double> ps;
  auto& a = ps.create("a", random_mat(4, 3, rng));
  auto& p = ps.create("p", random_vec(5, rng, 0.05, 2.0));  // positive, clear of the log floor

  double worst = fd_worst(ps, [&](Tape<double>& tp) {
    Ref ra = tp.param(a), rp = tp.param(p);
    Ref t = tp.sum_all(tp.sigmoid(ra));
    t = tp.add(t, tp.sum_all(tp.tanh_(ra)));
    t = tp.add(t, tp.sum_all(tp.gelu(ra)));
    t = tp.add(t, tp.mean_all(tp.exp_(tp.scale(ra, 0.3))));
    t = tp.add(t, tp.sum_all(tp.log_eps(rp)));
    t = tp.add(t, tp.sum_all(tp.sum_axis0(ra)));
    t = tp.add(t, tp.sum_all(tp.mean_axis0(tp.mul(ra, ra))));
    return t;
  });
  CHECK(worst < 1e-5);
}

TEST_CASE("layer_norm gradient") {
  Rng rng(19);
  ParamStore<double> ps;
  auto& x = ps.create("x", random_mat(3, 6, rng));
  auto& g = ps.create("g", random_vec(6, rng, 0.5, 1.5));
  auto& b = ps.create("b", random_vec(6, rng));

  double worst = fd_worst(ps, [&](Tape<double>& tp) {
    Ref y = tp.layer_norm(tp.param(x), tp.param(g), tp.param(b));
    return tp.sum_all(tp.mul(y, y));
  });
  CHECK(worst < 1e-5);
}

TEST_CASE("masked_softmax values") {
  Tape<double> tp;
  SUBCASE("uniform over masked-in positions") {
    Ref p = tp.masked_softmax(tp.constant(Arrayd::from({0.0, 0.0, 0.0})),
                              Arrayd::from({1.0, 1.0, 0.0}));
    CHECK(tp.val(p).at(0) == doctest::Approx(0.5));
    CHECK(tp.val(p).at(1) == doctest::Approx(0.5));
    CHECK(tp.val(p).at(2) == 0.0);
  }
  SUBCASE("dominance without overflow") {
    Ref p = tp.masked_softmax(tp.constant(Arrayd::from({100.0, 0.0})),
                              Arrayd::from({1.0, 1.0}));
    CHECK(tp.val(p).at(0) == doctest::Approx(1.0));
    CHECK(tp.val(p).at(1) == doctest::Approx(0.0));
    CHECK(std::isfinite(tp.val(p).at(0)));
  }
  SUBCASE("all-zero mask rejected") {
    CHECK_THROWS_AS(tp.masked_softmax(tp.constant(Arrayd::from({1.0, 2.0})),
                                      Arrayd::from({0.0, 0.0})),
                    ris::ValidationError);
  }
  SUBCASE("random sweep sums to one on the mask") {
    Rng rng(23);
    for (int it = 0; it < 200; ++it) {
      const int n = 1 + static_cast<int>(rng.below(12));
      Arrayd logits = random_vec(n, rng, -5.0, 5.0);
      Arrayd mask = Arrayd::vec(n);
      bool any = false;
      for (auto& m : mask.v) {
        m = rng.uniform() < 0.6 ? 1.0 : 0.0;
        any = any || m != 0.0;
      }
      if (!any) mask.at(static_cast<int>(rng.below(n))) = 1.0;
      Ref p = tp.masked_softmax(tp.constant(logits), mask);
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        if (mask.at(i) == 0.0) CHECK(tp.val(p).at(i) == 0.0);
        CHECK(tp.val(p).at(i) >= 0.0);
        s += tp.val(p).at(i);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("kl_divergence values") {
  Tape<double> tp;
  SUBCASE("identical distributions give zero") {
    Ref k = ris::kl_divergence(tp, tp.constant(Arrayd::from({0.5, 0.5})),
                               tp.constant(Arrayd::from({0.5, 0.5})));
    CHECK(tp.val(k).at(0) == doctest::Approx(0.0));
  }
  SUBCASE("hand-computed value") {
    Ref k = ris::kl_divergence(tp, tp.constant(Arrayd::from({0.75, 0.25})),
                               tp.constant(Arrayd::from({0.5, 0.5})));
    CHECK(tp.val(k).at(0) == doctest::Approx(0.130812).epsilon(1e-5));
  }
  SUBCASE("one-hot against uniform is ln 2") {
    Ref k = ris::kl_divergence(tp, tp.constant(Arrayd::from({1.0, 0.0})),
                               tp.constant(Arrayd::from({0.5, 0.5})));
    CHECK(tp.val(k).at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("non-normalized inputs rejected with sums reported") {
    try {
      ris::kl_divergence(tp, tp.constant(Arrayd::from({0.7, 0.7})),
                         tp.constant(Arrayd::from({0.5, 0.5})));
      FAIL("expected ValidationError");
    } catch (const ris::ValidationError& e) {
      CHECK(std::string(e.what()).find("1.4") != std::string::npos);
    }
  }
  SUBCASE("non-negative on random pairs, zero on identical") {
    Rng rng(29);
    for (int it = 0; it < 1000; ++it) {
      const int n = 2 + static_cast<int>(rng.below(8));
      Arrayd mask = Arrayd::vec(n, 1.0);
      Ref p = tp.masked_softmax(tp.constant(random_vec(n, rng, -3, 3)), mask);
      Ref q = tp.masked_softmax(tp.constant(random_vec(n, rng, -3, 3)), mask);
      Ref k = ris::kl_divergence(tp, p, q);
      CHECK(tp.val(k).at(0) >= -1e-12);
      Ref k0 = ris::kl_divergence(tp, p, p);
      CHECK(std::abs(tp.val(k0).at(0)) <= 1e-9);
    }
  }
}

TEST_CASE("backward basics") {
  SUBCASE("d(x*x)/dx at 3 is 6") {
    ParamStore<double> ps;
    auto& x = ps.create("x", Arrayd::scalar(3.0));
    Tape<double> tp;
    Ref rx = tp.param(x);
    Ref loss = tp.mul(rx, rx);
    tp.backward(loss);
    CHECK(x.grad.at(0) == doctest::Approx(6.0));
  }
  SUBCASE("non-scalar loss rejected") {
    Tape<double> tp;
    Ref v = tp.constant(Arrayd::from({1.0, 2.0}));
    CHECK_THROWS_AS(tp.backward(v), ris::Error);
  }
  SUBCASE("grads accumulate across backward calls until zeroed") {
    ParamStore<double> ps;
    auto& x = ps.create("x", Arrayd::scalar(2.0));
    Tape<double> tp;
    Ref loss = tp.mul(tp.param(x), tp.param(x));
    tp.backward(loss);
    tp.backward(loss);
    CHECK(x.grad.at(0) == doctest::Approx(8.0));
    ps.zero_grads();
    CHECK(x.grad.at(0) == 0.0);
  }
  SUBCASE("backward is bitwise deterministic") {
    Rng rng(31);
    ParamStore<double> ps;
    auto& w = ps.create("w", random_mat(4, 4, rng));
    auto& v = ps.create("v", random_vec(4, rng));
    Tape<double> tp;
    Ref h = tp.tanh_(tp.matmul(tp.param(w), tp.param(v)));
    Ref loss = tp.dot(h, h);
    tp.backward(loss);
    Arrayd g1 = w.grad;
    ps.zero_grads();
    tp.backward(loss);
    for (int i = 0; i < g1.numel(); ++i) CHECK(w.grad.at(i) == g1.at(i));
  }
}

TEST_CASE("masked_softmax and KL gradients vs finite differences") {
  Rng rng(37);
  SUBCASE("masked softmax then NLL") {
    ParamStore<double> ps;
    auto& logits = ps.create("logits", random_vec(6, rng, -2, 2));
    Arrayd mask = Arrayd::from({1.0, 0.0, 1.0, 1.0, 0.0, 1.0});
    double worst = fd_worst(ps, [&](Tape<double>& tp) {
      Ref p = tp.masked_softmax(tp.param(logits), mask);
      return tp.scale(tp.log_eps(tp.slice(p, 2, 3)), -1.0);
    }, 1e-3);
    CHECK(worst < 1e-5);
  }
  SUBCASE("KL wrt both p-logits and q-logits") {
    ParamStore<double> ps;
    auto& pl = ps.create("p_logits", random_vec(5, rng, -2, 2));
    auto& ql = ps.create("q_logits", random_vec(5, rng, -2, 2));
    Arrayd mask = Arrayd::vec(5, 1.0);
    double worst = fd_worst(ps, [&](Tape<double>& tp) {
      Ref p = tp.masked_softmax(tp.param(pl), mask);
      Ref q = tp.masked_softmax(tp.param(ql), mask);
      return ris::kl_divergence(tp, p, q);
    }, 1e-3);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("check_gradients report") {
  Rng rng(41);
  SUBCASE("linear layer is exact to 1e-6") {
    ParamStore<double> ps;
    auto& w = ps.create("w", random_mat(3, 5, rng));
    auto& b = ps.create("b", random_vec(3, rng));
    Arrayd x = random_vec(5, rng);
    auto fwd = [&](bool with_grad) {
      Tape<double> tp;
      Ref y = tp.affine(tp.constant(x), tp.param(w), tp.param(b));
      Ref loss = tp.dot(y, y);
      if (with_grad) tp.backward(loss);
      return tp.val(loss).at(0);
    };
    auto rep = ris::check_gradients<double>(fwd, ps);
    CHECK(rep.worst < 1e-6);
    CHECK(rep.entries.size() == 2);
  }
  SUBCASE("constant loss reports zero error under the floor") {
    ParamStore<double> ps;
    auto& w = ps.create("w", Arrayd::vec(4, 0.0));
    auto fwd = [&](bool with_grad) {
      Tape<double> tp;
      Ref h = tp.mul(tp.param(w), tp.constant(Arrayd::vec(4, 0.0)));
      Ref loss = tp.sum_all(h);
      if (with_grad) tp.backward(loss);
      return tp.val(loss).at(0);
    };
    auto rep = ris::check_gradients<double>(fwd, ps);
    CHECK(rep.worst == 0.0);
  }
}

TEST_CASE("shape errors name the offending shapes") {
  Tape<double> tp;
  Ref a = tp.constant(Arrayd::mat(2, 3));
  Ref b = tp.constant(Arrayd::mat(3, 2));
  try {
    tp.add(a, b);
    FAIL("expected shape error");
  } catch (const ris::Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(tp.matmul(a, a), ris::Error);
}
