#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ris/gradcheck.hpp"
#include "ris/interaction.hpp"

using namespace ris;

namespace {

Array<double> rand_mat(int r, int c, Rng& rng, double s = 0.5) {
  auto a = Array<double>::mat(r, c);
  for (auto& x : a.v) x = rng.uniform(-s, s);
  return a;
}

Array<double> rand_vec(int n, Rng& rng, double s = 0.5) {
  auto a = Array<double>::vec(n);
  for (auto& x : a.v) x = rng.uniform(-s, s);
  return a;
}

}  // namespace

TEST_CASE("additive_attention") {
  ParamStore<double> ps;
  AdditiveAttention<double> attn;
  Rng rng(11);
  attn.init(ps, "attn", 3, 4, 5, rng);

  SUBCASE("one unmasked key gets all the mass and becomes the context") {
    Tape<double> tp;
    Array<double> keys = rand_mat(4, 4, rng);
    Array<double> mask = Array<double>::from({0.0, 0.0, 1.0, 0.0});
    auto res = attn(tp, tp.constant(rand_vec(3, rng)), tp.constant(keys), mask);
    CHECK(tp.val(res.dist).at(2) == doctest::Approx(1.0));
    for (int j = 0; j < 4; ++j)
      CHECK(tp.val(res.ctx).at(j) == doctest::Approx(keys.at(2, j)));
  }
  SUBCASE("identical keys give a uniform distribution") {
    Tape<double> tp;
    Array<double> keys = Array<double>::mat(5, 4);
    Array<double> one = rand_vec(4, rng);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j) keys.at(i, j) = one.at(j);
    Array<double> mask = Array<double>::from({1.0, 1.0, 0.0, 1.0, 1.0});
    auto res = attn(tp, tp.constant(rand_vec(3, rng)), tp.constant(keys), mask);
    for (int i = 0; i < 5; ++i) {
      const double expect = mask.at(i) != 0.0 ? 0.25 : 0.0;
      CHECK(tp.val(res.dist).at(i) == doctest::Approx(expect));
    }
  }
  SUBCASE("gradient vs finite differences") {
    // Several probe points keep every weight element well coupled to the
    // loss; a feebly-coupled element cannot be measured to 1e-5 by any
    // finite-difference step.
    auto& q1 = ps.create("q1", rand_vec(3, rng));
    auto& q2 = ps.create("q2", rand_vec(3, rng));
    auto& keys = ps.create("keys", rand_mat(4, 4, rng));
    Array<double> mask1 = Array<double>::from({1.0, 0.0, 1.0, 1.0});
    Array<double> mask2 = Array<double>::from({0.0, 1.0, 1.0, 1.0});
    auto fwd = [&](bool g) {
      Tape<double> tp;
      auto r1 = attn(tp, tp.param(q1), tp.param(keys), mask1);
      auto r2 = attn(tp, tp.param(q2), tp.param(keys), mask2);
      Ref loss = tp.add(tp.dot(r1.ctx, r1.ctx),
                        tp.scale(tp.log_eps(tp.slice(r1.dist, 0, 1)), -1.0));
      loss = tp.add(loss, tp.dot(r2.ctx, r2.ctx));
      loss = tp.add(loss, tp.scale(tp.log_eps(tp.slice(r2.dist, 1, 2)), -2.0));
      if (g) tp.backward(loss);
      return tp.val(loss).at(0);
    };
    CHECK(ris::check_gradients<double>(fwd, ps, 1e-3).worst < 1e-5);
  }
}

TEST_CASE("cross_attention_dual") {
  ParamStore<double> ps;
  AdditiveAttention<double> attn;
  Rng rng(13);
  attn.init(ps, "attn", 3, 4, 5, rng);
  Tape<double> tp;
  Array<double> user_mask = Array<double>::from({1.0, 1.0, 0.0, 0.0, 1.0});
  Array<double> agent_mask = Array<double>::from({0.0, 0.0, 1.0, 1.0, 0.0});
  auto ca = cross_attention_dual(tp, attn, tp.constant(rand_vec(3, rng)),
                                 tp.constant(rand_mat(5, 4, rng)), user_mask,
                                 agent_mask);
  SUBCASE("same-role branch places no mass on the other role") {
    for (int i = 0; i < 5; ++i) {
      if (agent_mask.at(i) != 0.0) CHECK(tp.val(ca.att_same).at(i) == 0.0);
      if (user_mask.at(i) != 0.0) CHECK(tp.val(ca.att_cross).at(i) == 0.0);
    }
  }
  SUBCASE("each branch is separately normalized") {
    CHECK(tp.val(ca.att_same).sum() == doctest::Approx(1.0));
    CHECK(tp.val(ca.att_cross).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("combine_attention_gate") {
  ParamStore<double> ps;
  AdditiveAttention<double> attn;
  RoleGate<double> gate;
  Rng rng(17);
  attn.init(ps, "attn", 3, 4, 5, rng);
  gate.init(ps, "gate", 3, 4, rng);

  auto run_gate = [&](double bias) {
    Tape<double> tp;
    std::fill(gate.w->value.v.begin(), gate.w->value.v.end(), 0.0);
    gate.b->value.at(0) = bias;
    Array<double> user_mask = Array<double>::from({1.0, 1.0, 0.0});
    Array<double> agent_mask = Array<double>::from({0.0, 0.0, 1.0});
    auto ca = cross_attention_dual(tp, attn, tp.constant(rand_vec(3, rng)),
                                   tp.constant(rand_mat(3, 4, rng)), user_mask,
                                   agent_mask);
    auto g = gate(tp, tp.constant(rand_vec(3, rng)), ca);
    return std::make_tuple(tp.val(g.p_role).at(0), tp.val(g.att_final),
                           tp.val(ca.att_same), tp.val(ca.att_cross));
  };

  SUBCASE("gate driven to 1 reproduces the same-role distribution") {
    auto [p, att, same, cross] = run_gate(40.0);
    CHECK(p == doctest::Approx(1.0));
    for (int i = 0; i < 3; ++i) CHECK(att.at(i) == doctest::Approx(same.at(i)));
  }
  SUBCASE("zero gate weights give exactly p=0.5") {
    auto [p, att, same, cross] = run_gate(0.0);
    CHECK(p == 0.5);
    for (int i = 0; i < 3; ++i)
      CHECK(att.at(i) == doctest::Approx(0.5 * same.at(i) + 0.5 * cross.at(i)));
  }
  SUBCASE("convex combination: one-hot branches at p=0.5") {
    Tape<double> tp;
    Ref same = tp.constant(Array<double>::from({1.0, 0.0, 0.0}));
    Ref cross = tp.constant(Array<double>::from({0.0, 0.0, 1.0}));
    Ref p = tp.scalar(0.5);
    Ref att = tp.add(tp.mul(same, p), tp.mul(cross, tp.one_minus(p)));
    CHECK(tp.val(att).at(0) == 0.5);
    CHECK(tp.val(att).at(1) == 0.0);
    CHECK(tp.val(att).at(2) == 0.5);
  }
  SUBCASE("att_final sums to 1 for random gates") {
    for (int it = 0; it < 100; ++it) {
      Tape<double> tp;
      for (auto& x : gate.w->value.v) x = rng.uniform(-2, 2);
      gate.b->value.at(0) = rng.uniform(-2, 2);
      Array<double> user_mask = Array<double>::from({1.0, 0.0, 1.0, 0.0});
      Array<double> agent_mask = Array<double>::from({0.0, 1.0, 0.0, 1.0});
      auto ca = cross_attention_dual(tp, attn, tp.constant(rand_vec(3, rng)),
                                     tp.constant(rand_mat(4, 4, rng)),
                                     user_mask, agent_mask);
      auto g = gate(tp, tp.constant(rand_vec(3, rng)), ca);
      CHECK(tp.val(g.att_final).sum() == doctest::Approx(1.0).epsilon(1e-6));
      const double p = tp.val(g.p_role).at(0);
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}

TEST_CASE("attention_divergence_loss") {
  SUBCASE("identical accumulators give zero") {
    Tape<double> tp;
    AttnAccumulator<double> a, b;
    Ref d1 = tp.constant(Array<double>::from({0.25, 0.75}));
    Ref d2 = tp.constant(Array<double>::from({0.5, 0.5}));
    a.push(tp, d1);
    a.push(tp, d2);
    b.push(tp, d1);
    b.push(tp, d2);
    CHECK(tp.val(attention_divergence_loss(tp, a, b)).at(0) ==
          doctest::Approx(0.0));
  }
  SUBCASE("hand-computed averaged value") {
    Tape<double> tp;
    AttnAccumulator<double> cross, same;
    cross.push(tp, tp.constant(Array<double>::from({1.0, 0.0})));
    cross.push(tp, tp.constant(Array<double>::from({0.5, 0.5})));
    // Avg(cross) = [0.75, 0.25]
    same.push(tp, tp.constant(Array<double>::from({0.5, 0.5})));
    CHECK(tp.val(attention_divergence_loss(tp, cross, same)).at(0) ==
          doctest::Approx(0.130812).epsilon(1e-5));
  }
  SUBCASE("empty accumulator rejected") {
    Tape<double> tp;
    AttnAccumulator<double> cross, same;
    cross.push(tp, tp.constant(Array<double>::from({1.0, 0.0})));
    CHECK_THROWS_AS(attention_divergence_loss(tp, cross, same), Error);
  }
  SUBCASE("non-negative for random accumulators; detached guide changes no value") {
    Rng rng(23);
    for (int it = 0; it < 200; ++it) {
      Tape<double> tp;
      AttnAccumulator<double> cross, same;
      Array<double> mask = Array<double>::vec(4, 1.0);
      for (int s = 0; s < 3; ++s) {
        cross.push(tp, tp.masked_softmax(tp.constant(rand_vec(4, rng, 2.0)), mask));
        same.push(tp, tp.masked_softmax(tp.constant(rand_vec(4, rng, 2.0)), mask));
      }
      const double plain = tp.val(attention_divergence_loss(tp, cross, same, false)).at(0);
      const double detached = tp.val(attention_divergence_loss(tp, cross, same, true)).at(0);
      CHECK(plain >= -1e-12);
      CHECK(plain == doctest::Approx(detached));
    }
  }
}

TEST_CASE("role_attention") {
  ParamStore<double> ps;
  AdditiveAttention<double> attn;
  Rng rng(29);
  attn.init(ps, "role", 3, 3, 4, rng);

  SUBCASE("single partner state is returned exactly") {
    Tape<double> tp;
    Array<double> partner = rand_mat(1, 3, rng);
    auto res = role_attention(tp, attn, tp.constant(rand_vec(3, rng)),
                              tp.constant(partner));
    CHECK(tp.val(res.weights).at(0) == doctest::Approx(1.0));
    for (int j = 0; j < 3; ++j)
      CHECK(tp.val(res.r).at(j) == doctest::Approx(partner.at(0, j)));
  }
  SUBCASE("identical partner states weigh uniformly") {
    Tape<double> tp;
    Array<double> partner = Array<double>::mat(4, 3);
    Array<double> one = rand_vec(3, rng);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) partner.at(i, j) = one.at(j);
    auto res = role_attention(tp, attn, tp.constant(rand_vec(3, rng)),
                              tp.constant(partner));
    for (int i = 0; i < 4; ++i)
      CHECK(tp.val(res.weights).at(i) == doctest::Approx(0.25));
  }
  SUBCASE("gradient vs finite differences") {
    auto& q = ps.create("q", rand_vec(3, rng));
    auto& q2 = ps.create("q2", rand_vec(3, rng));
    auto& partner = ps.create("partner", rand_mat(3, 3, rng));
    auto fwd = [&](bool g) {
      Tape<double> tp;
      auto r1 = role_attention(tp, attn, tp.param(q), tp.param(partner));
      auto r2 = role_attention(tp, attn, tp.param(q2), tp.param(partner));
      Ref loss = tp.add(tp.dot(r1.r, r1.r), tp.dot(r2.r, tp.param(q2)));
      loss = tp.add(loss, tp.scale(tp.log_eps(tp.slice(r2.weights, 0, 1)), -1.0));
      if (g) tp.backward(loss);
      return tp.val(loss).at(0);
    };
    CHECK(ris::check_gradients<double>(fwd, ps, 1e-3).worst < 1e-5);
  }
}
