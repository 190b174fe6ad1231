#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fd.hpp"
#include "scone/autodiff.hpp"
#include "scone/errors.hpp"

using namespace scone;
using scone::ad::OpKind;
using scone::ad::Tape;
using scone::ad::Var;

TEST(Autodiff, ConstantOffPathHasZeroGradient) {
  Tape t;
  Var c = t.lift(3.0);
  Var x = t.lift(2.0);
  Var y = t.mul(x, x);
  auto g = t.backward(y);
  EXPECT_EQ(g[c], 0.0);
  EXPECT_EQ(g[x], 4.0);
}

TEST(Autodiff, LiftZeroIsAdditiveIdentity) {
  Tape t;
  Var z = t.lift(0.0);
  Var x = t.lift(1.5);
  Var y = t.add(z, x);
  EXPECT_EQ(t.value(y), 1.5);
  EXPECT_EQ(t.backward(y)[x], 1.0);
}

TEST(Autodiff, BackwardOnLeafIsOne) {
  Tape t;
  Var x = t.lift(7.0);
  EXPECT_EQ(t.backward(x)[x], 1.0);
}

TEST(Autodiff, Square) {
  Tape t;
  Var x = t.lift(3.0);
  EXPECT_DOUBLE_EQ(t.backward(t.mul(x, x))[x], 6.0);
}

TEST(Autodiff, Log) {
  Tape t;
  Var x = t.lift(2.0);
  EXPECT_DOUBLE_EQ(t.backward(t.log(x))[x], 0.5);
}

TEST(Autodiff, SumOfTwo) {
  Tape t;
  Var x = t.lift(1.0), y = t.lift(-4.0);
  auto g = t.backward(t.add(x, y));
  EXPECT_EQ(g[x], 1.0);
  EXPECT_EQ(g[y], 1.0);
}

TEST(Autodiff, ExpLogIdentity) {
  Tape t;
  Var x = t.lift(5.0);
  EXPECT_NEAR(t.backward(t.exp(t.log(x)))[x], 1.0, 1e-12);
}

TEST(Autodiff, LogSumExpGradientIsSoftmax) {
  const std::vector<double> z0{1.0, 2.0, 3.0};
  auto lse = [](const std::vector<double>& z) {
    double s = 0;
    for (double v : z) s += std::exp(v);
    return std::log(s);
  };
  Tape t;
  std::vector<Var> z;
  std::vector<Var> e;
  for (double v : z0) z.push_back(t.lift(v));
  for (Var v : z) e.push_back(t.exp(v));
  Var root = t.log(t.sum(e));
  auto g = t.backward(root);
  const auto fd = fdcheck::central_diff(lse, z0);
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(g[z[i]], std::exp(z0[i]) / denom, 1e-14);
    EXPECT_LT(std::abs(g[z[i]] - fd[i]) / std::abs(fd[i]), 1e-6);
  }
}

TEST(Autodiff, DomainErrors) {
  Tape t;
  Var zero = t.lift(0.0);
  Var neg = t.lift(-1.0);
  Var one = t.lift(1.0);
  EXPECT_THROW(t.log(zero), DomainError);
  EXPECT_THROW(t.log(neg), DomainError);
  EXPECT_THROW(t.div(one, zero), DomainError);
  try {
    t.log(neg);
  } catch (const DomainError& e) {
    EXPECT_EQ(e.node(), t.size());
  }
}

TEST(Autodiff, ReluAtZeroHasZeroDerivative) {
  Tape t;
  Var x = t.lift(0.0);
  EXPECT_EQ(t.backward(t.relu(x))[x], 0.0);
  Var y = t.lift(0.5);
  EXPECT_EQ(t.backward(t.relu(y))[y], 1.0);
}

TEST(Autodiff, Max2TieGoesToFirstArgument) {
  Tape t;
  Var a = t.lift(1.0), b = t.lift(1.0);
  auto g = t.backward(t.max2(a, b));
  EXPECT_EQ(g[a], 1.0);
  EXPECT_EQ(g[b], 0.0);
}

TEST(Autodiff, SumAndDotFusedOps) {
  Tape t;
  std::vector<Var> a{t.lift(1.0), t.lift(2.0), t.lift(3.0)};
  std::vector<Var> b{t.lift(4.0), t.lift(5.0), t.lift(6.0)};
  Var d = t.dot(a, b);
  EXPECT_EQ(t.value(d), 32.0);
  EXPECT_EQ(t.kind(d), OpKind::Dot);
  auto g = t.backward(d);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(g[a[i]], t.value(b[i]));
    EXPECT_EQ(g[b[i]], t.value(a[i]));
  }
  // Shared parents accumulate.
  Var s = t.dot(a, a);
  EXPECT_EQ(t.backward(s)[a[2]], 6.0);
}

namespace {

struct OpCase {
  OpKind kind;
  int arity;
  double lo, hi;
};

double eval_op(OpKind k, double a, double b) {
  switch (k) {
    case OpKind::Add: return a + b;
    case OpKind::Sub: return a - b;
    case OpKind::Mul: return a * b;
    case OpKind::Div: return a / b;
    case OpKind::Exp: return std::exp(a);
    case OpKind::Log: return std::log(a);
    case OpKind::Neg: return -a;
    case OpKind::Max2: return a >= b ? a : b;
    case OpKind::Relu: return a > 0 ? a : 0;
    case OpKind::Tanh: return std::tanh(a);
    default: return 0;
  }
}

}  // namespace

TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
  const std::vector<OpCase> cases{{OpKind::Add, 2, -3, 3},  {OpKind::Sub, 2, -3, 3},  {OpKind::Mul, 2, -3, 3},
                                  {OpKind::Div, 2, 0.5, 3}, {OpKind::Exp, 1, -3, 3},  {OpKind::Log, 1, 0.1, 5},
                                  {OpKind::Neg, 1, -3, 3},  {OpKind::Max2, 2, -3, 3}, {OpKind::Relu, 1, -3, 3},
                                  {OpKind::Tanh, 1, -3, 3}};
  std::mt19937_64 rng(42);
  for (const auto& c : cases) {
    std::uniform_real_distribution<double> u(c.lo, c.hi);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> x{u(rng), u(rng)};
      // Keep kinks out of reach of the difference stencil.
      if (c.kind == OpKind::Max2 && std::abs(x[0] - x[1]) < 1e-3) continue;
      if (c.kind == OpKind::Relu && std::abs(x[0]) < 1e-3) continue;
      Tape t;
      Var a = t.lift(x[0]);
      Var b = t.lift(x[1]);
      Var r = c.arity == 1 ? t.apply(c.kind, a) : t.apply(c.kind, a, b);
      EXPECT_NEAR(t.value(r), eval_op(c.kind, x[0], x[1]), 1e-15 * std::max(1.0, std::abs(t.value(r))));
      auto g = t.backward(r);
      const auto fd =
          fdcheck::central_diff([&](const std::vector<double>& v) { return eval_op(c.kind, v[0], v[1]); }, x);
      EXPECT_LT(fdcheck::rel_err(g[a], fd[0]), 1e-5) << ad::op_name(c.kind);
      if (c.arity == 2) EXPECT_LT(fdcheck::rel_err(g[b], fd[1]), 1e-5) << ad::op_name(c.kind);
    }
  }
}

namespace {

// A random 50-node expression replayed either on a tape or in plain doubles.
struct RandomProgram {
  struct Node {
    OpKind kind;
    int a, b;
  };
  int inputs = 5;
  std::vector<Node> nodes;

  explicit RandomProgram(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const OpKind kinds[] = {OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Tanh, OpKind::Exp, OpKind::Neg};
    for (int i = 0; i < 45; ++i) {
      const int avail = inputs + i;
      std::uniform_int_distribution<int> pick(0, avail - 1);
      nodes.push_back({kinds[rng() % 6], pick(rng), pick(rng)});
    }
  }

  template <typename T, typename Ops>
  T run(std::vector<T> vals, Ops ops) const {
    for (const auto& n : nodes) vals.push_back(ops(n.kind, vals[n.a], vals[n.b]));
    return vals.back();
  }
};

}  // namespace

TEST(Autodiff, RandomTapesMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const RandomProgram p(seed);
    std::mt19937_64 rng(seed + 100);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<double> x(p.inputs);
    for (auto& v : x) v = u(rng);
    // Exp can compound; squash every value through tanh in both paths.
    auto plain = [&](const std::vector<double>& in) {
      return p.run(in, [](OpKind k, double a, double b) { return std::tanh(eval_op(k, a, b)); });
    };
    Tape t;
    std::vector<Var> leaves;
    for (double v : x) leaves.push_back(t.lift(v));
    Var root = p.run(leaves, [&](OpKind k, Var a, Var b) {
      Var r = (k == OpKind::Tanh || k == OpKind::Exp || k == OpKind::Neg) ? t.apply(k, a) : t.apply(k, a, b);
      return t.tanh(r);
    });
    EXPECT_NEAR(t.value(root), plain(x), 1e-14);
    auto g = t.backward(root);
    const auto fd = fdcheck::central_diff(plain, x);
    for (int i = 0; i < p.inputs; ++i) EXPECT_LT(fdcheck::rel_err(g[leaves[i]], fd[i]), 1e-5);
  }
}

TEST(Autodiff, Linearity) {
  Tape t;
  Var x = t.lift(0.7), y = t.lift(-1.3);
  Var f = t.mul(t.tanh(x), y);
  Var g = t.exp(t.mul(x, y));
  Var h = t.add(t.mul(f, 2.5), t.mul(g, -0.5));
  auto gf = t.backward(f), gg = t.backward(g), gh = t.backward(h);
  EXPECT_NEAR(gh[x], 2.5 * gf[x] - 0.5 * gg[x], 1e-14);
  EXPECT_NEAR(gh[y], 2.5 * gf[y] - 0.5 * gg[y], 1e-14);
}

TEST(Autodiff, BackwardIsRepeatable) {
  Tape t;
  Var x = t.lift(0.3);
  Var r = x;
  for (int i = 0; i < 30; ++i) r = t.tanh(t.add(t.mul(r, 1.7), x));
  auto a = t.backward(r);
  auto b = t.backward(r);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.raw()[i], b.raw()[i]);
}

TEST(Autodiff, ClearResetsTape) {
  Tape t;
  t.lift(1.0);
  t.clear();
  EXPECT_TRUE(t.empty());
  Var x = t.lift(2.0);
  EXPECT_EQ(x.index, 0u);
}
