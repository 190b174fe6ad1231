#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fd.hpp"
#include "scone/errors.hpp"
#include "scone/objective.hpp"

using namespace scone;

namespace {

// A one-hidden-layer model whose logits at input x are (x0, x1) exactly:
// identity output on a linear hidden layer would need linear activation, so
// use a single linear layer instead.
MlpModel linear_model(double w = 1.0) {
  MlpModel m = make_model({2, 2}, Activation::Tanh);
  m.weights[0] = {1, 0, 0, 1};
  m.ood_scale = w;
  return m;
}

// Input whose two logits give energy e under linear_model: f = (a, a) with
// -a - log 2 = e.
Vector at_energy(double e) {
  const double a = -e - std::log(2.0);
  return {a, a};
}

double tape_value(const MlpModel& m, const std::function<ad::Var(const BoundModel&)>& f) {
  ad::Tape t;
  BoundModel b(m, t);
  return t.value(f(b));
}

std::vector<double> tape_grad(const MlpModel& m, const std::function<ad::Var(const BoundModel&)>& f) {
  ad::Tape t;
  BoundModel b(m, t);
  return b.gradient(t.backward(f(b)));
}

std::vector<double> fd_grad(const MlpModel& m, const std::function<double(const MlpModel&)>& f) {
  return fdcheck::central_diff(
      [&](const std::vector<double>& p) {
        MlpModel q = m;
        q.set_flat_parameters(p);
        return f(q);
      },
      m.flat_parameters());
}

FeatureSet random_points(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, scale);
  FeatureSet out(n, Vector(d));
  for (auto& x : out)
    for (auto& v : x) v = g(rng);
  return out;
}

LabeledSet random_labeled(std::size_t n, std::size_t d, std::size_t k, std::uint64_t seed) {
  LabeledSet s{random_points(n, d, seed), {}};
  for (std::size_t i = 0; i < n; ++i) s.ys.push_back(i % k);
  return s;
}

}  // namespace

TEST(Objective, Sigmoid) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(20.0) + sigmoid(-20.0), 1.0, 1e-15);
  EXPECT_GT(sigmoid(-800.0), -1e-300);
  EXPECT_EQ(sigmoid(800.0), 1.0);
}

TEST(Objective, LossWildExamples) {
  const MlpModel m = linear_model();
  EXPECT_NEAR(tape_value(m, [&](const BoundModel& b) { return loss_wild(b, {{at_energy(0), at_energy(0)}}); }), 0.5,
              1e-15);
  EXPECT_NEAR(tape_value(m, [&](const BoundModel& b) { return loss_wild(b, {{at_energy(20)}}); }),
              1 / (1 + std::exp(20.0)), 1e-20);
  const MlpModel z = linear_model(0.0);
  EXPECT_EQ(tape_value(z, [&](const BoundModel& b) { return loss_wild(b, {{at_energy(-7), at_energy(33)}}); }), 0.5);
}

TEST(Objective, ConstraintMarginExamples) {
  for (double w : {0.3, 1.0, 4.0}) {
    const MlpModel m = linear_model(w);
    EXPECT_NEAR(
        tape_value(m, [&](const BoundModel& b) { return constraint_margin(b, {at_energy(-2), at_energy(-2)}, -2); }),
        0.5, 1e-12);
  }
  const MlpModel m = linear_model();
  EXPECT_NEAR(tape_value(m, [&](const BoundModel& b) { return constraint_margin(b, {at_energy(-22)}, -2); }),
              1 / (1 + std::exp(20.0)), 1e-18);
}

TEST(Objective, ConstraintClsExamples) {
  const MlpModel zero = make_model({2, 4, 2}, Activation::Tanh);
  const LabeledSet s = random_labeled(10, 2, 2, 1);
  EXPECT_NEAR(tape_value(zero, [&](const BoundModel& b) { return constraint_cls(b, s); }), std::log(2.0), 1e-15);

  const MlpModel m = linear_model();
  const LabeledSet sep{{{10, -10}, {-10, 10}}, {0, 1}};
  EXPECT_LT(tape_value(m, [&](const BoundModel& b) { return constraint_cls(b, sep); }), 1e-4);

  const MlpModel r = init_model({2, 5, 3}, Activation::Tanh, 4);
  const LabeledSet s3 = random_labeled(7, 2, 3, 2);
  double manual = 0;
  for (std::size_t i = 0; i < s3.size(); ++i) manual += loss_cls(logits(r, s3.xs[i]), s3.ys[i]);
  EXPECT_NEAR(tape_value(r, [&](const BoundModel& b) { return constraint_cls(b, s3); }), manual / 7, 1e-14);
  EXPECT_NEAR(constraint_cls_value(r, s3), manual / 7, 1e-14);
}

TEST(Objective, AlmPenaltyExamples) {
  EXPECT_EQ(alm_penalty(0.0, 2.0, 10.0), 0.0);
  EXPECT_DOUBLE_EQ(alm_penalty(-1.0, 0.5, 1.0), -0.125);
  EXPECT_DOUBLE_EQ(alm_penalty(0.5, 1.0, 2.0), 0.5 + 0.25);
  ad::Tape t;
  ad::Var c = t.lift(0.3);
  ad::Var p = alm_penalty(t, c, 0.7, 3.0);
  EXPECT_DOUBLE_EQ(t.value(p), alm_penalty(0.3, 0.7, 3.0));
  EXPECT_DOUBLE_EQ(t.backward(p)[c], 0.7 + 3.0 * 0.3);
  ad::Var c2 = t.lift(-1.0);
  ad::Var p2 = alm_penalty(t, c2, 0.5, 1.0);
  EXPECT_EQ(t.backward(p2)[c2], 0.0);
}

TEST(Objective, AlmLossReducesToWildLoss) {
  const MlpModel m = init_model({2, 6, 2}, Activation::Tanh, 3);
  const WildBatch wild{random_points(20, 2, 5)};
  const LabeledSet id = random_labeled(20, 2, 2, 6);
  ConstraintSpec spec;
  spec.alpha = 0.99;
  spec.tau = 100.0;  // both constraints satisfied
  AlmState alm;
  alm.rho = 1e-12;
  const double full = tape_value(m, [&](const BoundModel& b) { return alm_unconstrained_loss(b, wild, id, spec, alm); });
  EXPECT_NEAR(full, loss_wild_value(m, wild.xs), 1e-9);
}

TEST(Objective, WoodsReductionAtZeroMargin) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MlpModel m = init_model({2, 8, 8, 3}, Activation::Tanh, seed);
    const WildBatch wild{random_points(30, 2, seed + 10, 3.0)};
    const FeatureSet id = random_points(30, 2, seed + 20, 3.0);
    const double a = tape_value(m, [&](const BoundModel& b) { return loss_wild(b, wild); });
    const double b = tape_value(m, [&](const BoundModel& b) { return woods::loss_wild(b, wild); });
    EXPECT_NEAR(a, b, 1e-12);
    const double c = tape_value(m, [&](const BoundModel& b) { return constraint_margin(b, id, 0.0); });
    const double d = tape_value(m, [&](const BoundModel& b) { return woods::constraint_in(b, id); });
    EXPECT_NEAR(c, d, 1e-12);
  }
}

TEST(Objective, MarginMonotoneInEta) {
  const MlpModel m = init_model({2, 8, 2}, Activation::Tanh, 1);
  const FeatureSet id = random_points(40, 2, 2);
  double prev = -1;
  for (double eta : {0.0, -0.1, -0.5, -1.0, -2.0, -5.0}) {
    const double v = constraint_margin_value(m, id, eta);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Objective, TapeFreeValuesAgree) {
  const MlpModel m = init_model({3, 7, 2}, Activation::Relu, 8);
  const WildBatch wild{random_points(15, 3, 1)};
  const LabeledSet id = random_labeled(15, 3, 2, 2);
  ConstraintSpec spec{0.05, 0.3, -1.0};
  AlmState alm{0.4, 1.2, 3.0};
  EXPECT_NEAR(tape_value(m, [&](const BoundModel& b) { return loss_wild(b, wild); }), loss_wild_value(m, wild.xs),
              1e-14);
  EXPECT_NEAR(tape_value(m, [&](const BoundModel& b) { return constraint_margin(b, id.xs, -1.0); }),
              constraint_margin_value(m, id.xs, -1.0), 1e-14);
  EXPECT_NEAR(tape_value(m, [&](const BoundModel& b) { return alm_unconstrained_loss(b, wild, id, spec, alm); }),
              alm_loss_value(m, wild.xs, id, spec, alm), 1e-13);
}

TEST(Objective, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    MlpModel m = init_model({2, 6, 5, 3}, Activation::Tanh, seed);
    m.ood_scale = 0.7 + 0.3 * seed;
    const WildBatch wild{random_points(12, 2, seed + 1, 2.0)};
    const LabeledSet id = random_labeled(12, 2, 3, seed + 2);
    const ConstraintSpec spec{0.05, 0.4, -0.5};
    const AlmState alm{0.3, 0.8, 2.0};

    auto check = [&](const std::function<ad::Var(const BoundModel&)>& taped,
                     const std::function<double(const MlpModel&)>& plain) {
      const auto g = tape_grad(m, taped);
      const auto fd = fd_grad(m, plain);
      EXPECT_LT(fdcheck::max_rel_err(g, fd), 1e-5);
    };
    check([&](const BoundModel& b) { return loss_wild(b, wild); },
          [&](const MlpModel& q) { return loss_wild_value(q, wild.xs); });
    check([&](const BoundModel& b) { return constraint_margin(b, id.xs, spec.eta); },
          [&](const MlpModel& q) { return constraint_margin_value(q, id.xs, spec.eta); });
    check([&](const BoundModel& b) { return constraint_cls(b, id); },
          [&](const MlpModel& q) { return constraint_cls_value(q, id); });
    check([&](const BoundModel& b) { return alm_unconstrained_loss(b, wild, id, spec, alm); },
          [&](const MlpModel& q) { return alm_loss_value(q, wild.xs, id, spec, alm); });
  }
}

TEST(Objective, OodScaleGradient) {
  // d/dw mean sigmoid(-w E) = mean(-E * s * (1 - s)).
  const MlpModel m = linear_model(0.8);
  const WildBatch wild{{at_energy(1.5), at_energy(-0.5)}};
  const auto g = tape_grad(m, [&](const BoundModel& b) { return loss_wild(b, wild); });
  double expect = 0;
  for (double e : {1.5, -0.5}) {
    const double s = sigmoid(-0.8 * e);
    expect += -e * s * (1 - s) / 2;
  }
  EXPECT_NEAR(g.back(), expect, 1e-12);
}

TEST(Objective, AlmStateUpdate) {
  AlmState a;
  a.update(0.2, -0.5, std::nullopt);
  EXPECT_DOUBLE_EQ(a.lambda1, 0.2);
  EXPECT_EQ(a.lambda2, 0.0);
  EXPECT_EQ(a.rho, 1.0);
  // c1 did not shrink by 0.9: rho grows.
  a.update(0.19, -0.5, std::make_pair(0.2, -0.5));
  EXPECT_EQ(a.rho, 2.0);
  // Both shrank enough (or are satisfied): rho stays.
  a.update(0.1, -0.1, std::make_pair(0.19, -0.5));
  EXPECT_EQ(a.rho, 2.0);
  a.rho = 9000;
  a.update(1.0, 1.0, std::make_pair(1.0, 1.0));
  EXPECT_EQ(a.rho, 1e4);
  a.update(-1e9, -1e9, std::make_pair(1.0, 1.0));
  EXPECT_EQ(a.lambda1, 0.0);
  EXPECT_EQ(a.lambda2, 0.0);
}

TEST(Objective, ZeroOneReportExamples) {
  const MlpModel m = linear_model();
  const FeatureSet out_wild{at_energy(1.0), at_energy(5.0)};
  const LabeledSet id{{at_energy(-1.0), at_energy(-0.5)}, {0, 0}};
  ConstraintSpec spec{0.05, 0.1, -2.0};
  auto r = zero_one_report(m, out_wild, id, spec);
  EXPECT_EQ(r.objective, 0.0);
  EXPECT_EQ(r.c1, 1.0);
  EXPECT_EQ(r.c2, 0.0);  // equal logits predict class 0
}

TEST(Objective, SurrogateAgreesWithIndicatorsWhenSaturated) {
  const MlpModel m = linear_model(2.0);
  FeatureSet wild;
  LabeledSet id;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1.6, 10.0);
  for (int i = 0; i < 200; ++i) {
    const double sign = i % 3 == 0 ? -1.0 : 1.0;
    wild.push_back(at_energy(sign * u(rng)));
    id.xs.push_back(at_energy(-1.0 + sign * u(rng)));
    id.ys.push_back(0);
  }
  const ConstraintSpec spec{0.05, 1.0, -1.0};
  const auto r = zero_one_report(m, wild, id, spec);
  EXPECT_NEAR(loss_wild_value(m, wild), r.objective, 0.1);
  EXPECT_NEAR(constraint_margin_value(m, id.xs, spec.eta), r.c1, 0.1);
}

TEST(Objective, ConstraintSpecValidation) {
  EXPECT_THROW((ConstraintSpec{0.0, 0.1, 0.0}.validate()), ConfigError);
  EXPECT_THROW((ConstraintSpec{0.05, 0.1, 0.5}.validate()), ConfigError);
  EXPECT_THROW((ConstraintSpec{0.05, -1.0, 0.0}.validate()), ConfigError);
  EXPECT_NO_THROW((ConstraintSpec{0.05, 0.0, -50.0}.validate()));
}

// --- training -----------------------------------------------------------------

namespace {

struct Toy {
  SyntheticData d = gen_synthetic(SyntheticSpec{}, 1);
};

OptimizerSettings quick() {
  OptimizerSettings o;
  o.warmup_epochs = 2;
  o.inner_epochs = 2;
  o.outer_iterations = 3;
  o.reference_wild_size = 256;
  return o;
}

}  // namespace

TEST(Training, ZeroStepsReturnsInit) {
  Toy t;
  WildMixture wild(t.d.id.xs, t.d.cov, t.d.sem, {0.5, 0.1}, 1);
  OptimizerSettings o;
  o.warmup_epochs = 0;
  o.outer_iterations = 0;
  const MlpModel init = init_model({2, 8, 2}, Activation::Tanh, 2);
  const auto r = train(init, t.d.id, wild, ConstraintSpec{0.05, 0.5, 0.0}, o, 3);
  EXPECT_EQ(r.model, init);
  EXPECT_TRUE(r.history.epochs.empty());
}

TEST(Training, DeterministicPerSeed) {
  Toy t;
  const MlpModel init = init_model({2, 8, 2}, Activation::Tanh, 2);
  auto run = [&](std::uint64_t seed) {
    WildMixture wild(t.d.id.xs, t.d.cov, t.d.sem, {0.5, 0.1}, seed);
    return train(init, t.d.id, wild, ConstraintSpec{}, quick(), seed);
  };
  const auto a = run(5), b = run(5), c = run(6);
  EXPECT_EQ(a.model, b.model);
  EXPECT_NE(a.model, c.model);
  std::ostringstream ha, hb;
  write_history_csv(ha, a.history);
  write_history_csv(hb, b.history);
  EXPECT_EQ(ha.str(), hb.str());
}

TEST(Training, HistoryShapeAndInvariants) {
  Toy t;
  WildMixture wild(t.d.id.xs, t.d.cov, t.d.sem, {0.5, 0.1}, 1);
  const auto o = quick();
  const auto r = train(init_model({2, 8, 2}, Activation::Tanh, 1), t.d.id, wild, ConstraintSpec{}, o, 1);
  EXPECT_EQ(r.history.epochs.size(), static_cast<std::size_t>(o.warmup_epochs + o.inner_epochs * o.outer_iterations));
  EXPECT_EQ(r.history.outer.size(), static_cast<std::size_t>(o.outer_iterations));
  EXPECT_NEAR(r.spec.tau, o.tau_factor * r.history.warmup_loss, 1e-15);
  double rho = 0;
  for (const auto& rec : r.history.outer) {
    EXPECT_GE(rec.lambda1, 0.0);
    EXPECT_GE(rec.lambda2, 0.0);
    EXPECT_GE(rec.rho, rho);
    rho = rec.rho;
  }
  EXPECT_GE(r.model.ood_scale, o.min_ood_scale);
  std::ostringstream csv;
  write_history_csv(csv, r.history);
  EXPECT_TRUE(csv.str().starts_with("outer,epoch,loss_wild,c1,c2,lambda1,lambda2,rho\n"));
}

TEST(Training, PureIdPoolIsFeasible) {
  Toy t;
  WildMixture wild(t.d.id.xs, t.d.cov, t.d.sem, {0.0, 0.0}, 1);
  const double halves[] = {0.5, 0.5};
  const auto parts = split(t.d.id, halves, 1);
  OptimizerSettings o;
  o.outer_iterations = 8;
  const auto r = train(init_model({2, 16, 2}, Activation::Tanh, 1), parts[0], wild, ConstraintSpec{}, o, 1);
  const auto& last = r.history.outer.back();
  EXPECT_LE(last.c1, 0.01);
  EXPECT_LE(last.c2, 0.01);
}

TEST(Training, FeasibilityDoesNotWorsen) {
  Toy t;
  WildMixture wild(t.d.id.xs, t.d.cov, t.d.sem, {0.5, 0.1}, 2);
  OptimizerSettings o;
  o.outer_iterations = 10;
  const auto r = train(init_model({2, 16, 16, 2}, Activation::Tanh, 2), t.d.id, wild, ConstraintSpec{0.05, 0, -1}, o, 2);
  const auto& first = r.history.outer.front();
  const auto& last = r.history.outer.back();
  EXPECT_LE(std::max(last.c1, 0.0), std::max(first.c1, 0.0) + 1e-12);
  EXPECT_LE(std::max(last.c2, 0.0), std::max(first.c2, 0.0) + 1e-12);
}

TEST(Training, DivergenceRaisesWithHistory) {
  Toy t;
  WildMixture wild(t.d.id.xs, t.d.cov, t.d.sem, {0.5, 0.1}, 1);
  OptimizerSettings o = quick();
  o.learning_rate = 1e300;
  o.max_grad_norm = 0;
  o.warmup_epochs = 1;
  try {
    train(init_model({2, 8, 2}, Activation::Tanh, 1), t.d.id, wild, ConstraintSpec{}, o, 1);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
    EXPECT_LE(e.history().epochs.size(), 7u);
  }
}

TEST(Training, RejectsBadInputs) {
  Toy t;
  WildMixture wild(t.d.id.xs, t.d.cov, t.d.sem, {0.5, 0.1}, 1);
  EXPECT_THROW(train(init_model({3, 4, 2}, Activation::Tanh, 1), t.d.id, wild, ConstraintSpec{}, quick(), 1),
               ShapeError);
  OptimizerSettings o = quick();
  o.batch_size = 0;
  EXPECT_THROW(train(init_model({2, 4, 2}, Activation::Tanh, 1), t.d.id, wild, ConstraintSpec{}, o, 1), ConfigError);
}
