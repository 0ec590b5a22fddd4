#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "rfn/diffcore/checkpoint.hpp"
#include "rfn/diffcore/optim.hpp"
#include "rfn/diffcore/primitives.hpp"
#include "support.hpp"

namespace rfn::diff {
namespace {

using test::grad_error;

TEST(Primitives, SoftplusAtZeroIsLogTwoWithSlopeHalf) {
  const RealArray x = RealArray::scalar(0.0);
  auto r = primitive_forward_backward("softplus", std::vector<RealArray>{x});
  EXPECT_NEAR(r.output[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(r.pullback(RealArray::scalar(1.0))[0][0], 0.5, 1e-15);
}

TEST(Primitives, MatmulIdentityPassesCotangentThrough) {
  const RealArray v = RealArray::column({0.3, -1.2});
  auto r = primitive_forward_backward("matmul", std::vector<RealArray>{RealArray::identity(2), v});
  EXPECT_EQ(r.output, v);
  const RealArray w = RealArray::column({2.5, -0.7});
  EXPECT_EQ(r.pullback(w)[1], w);
}

TEST(Primitives, EveryPrimitiveMatchesCentralDifferences) {
  Rng rng(11);
  for (const auto& op : primitive_names()) {
    for (std::size_t trial = 0; trial < 5; ++trial) {
      const auto c = test::primitive_case(op, rng, trial);
      const auto report = test::check_primitive(op, c.inputs, c.options, rng);
      EXPECT_LT(report.max_error, 1e-4) << op << " trial " << trial << " worst " << report.worst;
    }
  }
}

TEST(Primitives, LogOfNonPositiveNamesOpAndIndex) {
  const RealArray x = RealArray::row({1.0, 2.0, -0.5});
  try {
    primitive_forward_backward("log", std::vector<RealArray>{x});
    FAIL() << "expected a domain error";
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("log"), std::string::npos);
    EXPECT_NE(msg.find("index 2"), std::string::npos);
  }
}

TEST(Primitives, NonFiniteInputRejected) {
  const RealArray x = RealArray::row({1.0, std::nan("")});
  EXPECT_THROW(primitive_forward_backward("exp", std::vector<RealArray>{x}), DomainError);
}

TEST(Primitives, UnknownNameRejected) {
  EXPECT_THROW(primitive_forward_backward("cosh", std::vector<RealArray>{RealArray::scalar(1)}),
               UsageError);
}

TEST(Primitives, LogSumExpIsStableForLargeInputs) {
  const RealArray x = RealArray::row({1000.0, 1000.0});
  auto r = primitive_forward_backward("log-sum-exp", std::vector<RealArray>{x});
  EXPECT_NEAR(r.output[0], 1000.0 + std::log(2.0), 1e-9);
}

TEST(Primitives, GatherAndSegmentSumAreTransposes) {
  // <gather(x), y> == <x, segment_sum(y)> for matching indices.
  Rng rng(5);
  const std::vector<std::size_t> index = {2, 0, 0, 1, 2, 2};
  const RealArray x = normal_array(rng, 3, 2);
  const RealArray y = normal_array(rng, 6, 2);
  PrimitiveOptions opt;
  opt.index = index;
  opt.segments = 3;
  const auto g = primitive_forward_backward("gather", std::vector<RealArray>{x}, opt).output;
  const auto s = primitive_forward_backward("segment-sum", std::vector<RealArray>{y}, opt).output;
  EXPECT_NEAR(test::inner(g, y), test::inner(x, s), 1e-12);
}

TEST(Tape, BroadcastAddReducesGradientOverRows) {
  Tape t;
  Var a = t.variable(RealArray(3, 2, 1.0));
  Var b = t.variable(RealArray::row({0.5, -0.5}));
  Var y = sum(add(a, b));
  t.backward(y);
  EXPECT_EQ(t.gradient(b), RealArray::row({3.0, 3.0}));
  EXPECT_EQ(t.gradient(a), RealArray(3, 2, 1.0));
}

TEST(Tape, GradientAccumulationIsAdditive) {
  Rng rng(3);
  ParameterSet ps;
  Parameter& w = ps.add("w", normal_array(rng, 3, 3));
  const RealArray x = normal_array(rng, 2, 3);
  auto loss1 = [&](Tape& t) { return sum(tanh(matmul(t.constant(x), t.param(w)))); };
  auto loss2 = [&](Tape& t) { return sum(exp(affine(t.param(w), 0.3))); };

  ps.zero_grad();
  {
    Tape t;
    t.backward(add(loss1(t), loss2(t)));
  }
  const RealArray joint = w.gradient;

  ps.zero_grad();
  {
    Tape t;
    t.backward(loss1(t));
  }
  {
    Tape t;
    t.backward(loss2(t));
  }
  for (std::size_t i = 0; i < joint.size(); ++i) EXPECT_NEAR(joint[i], w.gradient[i], 1e-12);
}

TEST(Parameters, GradientIsZeroAfterReset) {
  ParameterSet ps;
  Parameter& p = ps.add("p", RealArray(2, 3, 1.0));
  Tape t;
  t.backward(sum(mul(t.param(p), t.param(p))));
  EXPECT_NE(p.gradient.sum(), 0.0);
  ps.zero_grad();
  EXPECT_TRUE(p.gradient.same_shape(p.value));
  for (double g : p.gradient.values()) EXPECT_EQ(g, 0.0);
}

TEST(Parameters, DuplicateIdRejected) {
  ParameterSet ps;
  ps.add("a", RealArray::scalar(1));
  EXPECT_THROW(ps.add("a", RealArray::scalar(2)), UsageError);
}

// Independent Adam recurrence for one scalar.
double adam_reference(const std::vector<double>& grads, double lr) {
  double m = 0, v = 0, x = 0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
  }
  return x;
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet ps;
  Parameter& p = ps.add("p", RealArray::scalar(0.0));
  p.gradient = RealArray::scalar(0.5);
  AdamState s;
  adam_step(ps, s);
  EXPECT_NEAR(p.value[0], -0.003, 1e-10);
  EXPECT_NEAR(p.value[0], adam_reference({0.5}, 0.003), 1e-15);
  EXPECT_EQ(s.step_count, 1);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Rng rng(8);
  ParameterSet ps;
  Parameter& p = ps.add("p", normal_array(rng, 4, 3));
  const RealArray before = p.value;
  AdamState s;
  for (int i = 0; i < 3; ++i) {
    ps.zero_grad();
    adam_step(ps, s);
  }
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(s.step_count, 3);
}

TEST(Adam, ConstantGradientMovesMonotonicallyAgainstSign) {
  ParameterSet ps;
  Parameter& p = ps.add("p", RealArray::scalar(1.0));
  AdamState s;
  double prev = p.value[0];
  for (int i = 0; i < 2; ++i) {
    p.gradient = RealArray::scalar(-0.2);
    adam_step(ps, s);
    EXPECT_GT(p.value[0], prev);
    prev = p.value[0];
  }
  EXPECT_NEAR(p.value[0] - 1.0, adam_reference({-0.2, -0.2}, 0.003), 1e-15);
}

TEST(Adam, MomentShapesFollowParameters) {
  ParameterSet ps;
  ps.add("w", RealArray(2, 5, 0.1));
  ps.add("stat", RealArray(1, 2, 0.0), false);
  ps.zero_grad();
  AdamState s;
  adam_step(ps, s);
  EXPECT_TRUE(s.first_moment.at("w").same_shape(RealArray(2, 5)));
  EXPECT_TRUE(s.second_moment.at("w").same_shape(RealArray(2, 5)));
  EXPECT_EQ(s.first_moment.count("stat"), 0u);
}

TEST(Adam, MissingGradientRejected) {
  ParameterSet ps;
  Parameter& p = ps.add("p", RealArray(2, 2, 1.0));
  p.gradient = RealArray();
  AdamState s;
  EXPECT_THROW(adam_step(ps, s), UsageError);
}

TEST(Adam, ZeroLearningRateLeavesParameters) {
  ParameterSet ps;
  Parameter& p = ps.add("p", RealArray::row({1.0, -2.0}));
  p.gradient = RealArray::row({0.3, 0.7});
  AdamState s;
  s.learning_rate = 0.0;
  adam_step(ps, s);
  EXPECT_EQ(p.value, RealArray::row({1.0, -2.0}));
}

TEST(Adam, ClippingBoundsTheGradientNorm) {
  ParameterSet a, b;
  Parameter& pa = a.add("p", RealArray::scalar(0.0));
  Parameter& pb = b.add("p", RealArray::scalar(0.0));
  pa.gradient = RealArray::scalar(10.0);
  pb.gradient = RealArray::scalar(1.0);
  AdamState sa, sb;
  sa.clip_norm = 1.0;
  adam_step(a, sa);
  adam_step(b, sb);
  EXPECT_NEAR(sa.second_moment.at("p")[0], sb.second_moment.at("p")[0], 1e-15);
}

TEST(Plateau, ReducesAfterPatienceExceeded) {
  PlateauSchedule s;
  s.patience = 100;
  double lr = 0.003;
  plateau_update(s, 1.0, lr);
  for (int e = 0; e < 100; ++e) {
    EXPECT_FALSE(plateau_update(s, 0.5, lr));
  }
  EXPECT_TRUE(plateau_update(s, 0.5, lr));
  EXPECT_NEAR(lr, 0.0003, 1e-15);
}

TEST(Plateau, ImprovingMetricNeverReduces) {
  PlateauSchedule s;
  s.patience = 2;
  double lr = 0.003;
  for (int e = 0; e < 50; ++e) plateau_update(s, static_cast<double>(e), lr);
  EXPECT_EQ(lr, 0.003);
}

TEST(Plateau, HandSimulatedCounter) {
  PlateauSchedule s;
  s.patience = 2;
  double lr = 1.0;
  const std::vector<double> metrics = {1.0, 0.9, 0.9, 0.9};
  std::vector<bool> reduced;
  for (double m : metrics) reduced.push_back(plateau_update(s, m, lr));
  EXPECT_EQ(reduced, (std::vector<bool>{false, false, false, true}));
  EXPECT_NEAR(lr, 0.1, 1e-15);
}

TEST(Plateau, LearningRateNeverIncreases) {
  Rng rng(21);
  PlateauSchedule s;
  s.patience = 3;
  double lr = 0.003, prev = lr;
  for (int e = 0; e < 500; ++e) {
    plateau_update(s, standard_normal(rng), lr);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Checkpoint, RoundTripIsLossless) {
  Rng rng(4);
  ParameterSet ps;
  Parameter& w = ps.add("w", normal_array(rng, 3, 2));
  w.value[0] = 0.1 + 0.2;
  w.value[1] = std::numbers::pi * 1e-300;
  ps.add("stat", RealArray::row({1.0 / 3.0, 2.0}), false);
  ps.zero_grad();
  w.gradient = normal_array(rng, 3, 2);
  AdamState opt;
  adam_step(ps, opt);
  PlateauSchedule sched;
  sched.best_metric = -1.25;
  const auto dir = test::scratch_dir("checkpoint");
  save_checkpoint(make_checkpoint(ps, opt, sched, {{"note", "x"}}), dir / "c.json");
  const Checkpoint c = load_checkpoint(dir / "c.json");
  EXPECT_EQ(c.values.at("w"), w.value);
  EXPECT_EQ(c.values.at("stat"), ps.at("stat").value);
  EXPECT_FALSE(c.trainable.at("stat"));
  EXPECT_EQ(c.optimizer.step_count, 1);
  EXPECT_EQ(c.optimizer.first_moment.at("w"), opt.first_moment.at("w"));
  EXPECT_EQ(c.optimizer.second_moment.at("w"), opt.second_moment.at("w"));
  EXPECT_EQ(c.schedule.best_metric, -1.25);
  EXPECT_EQ(c.metadata.at("note"), "x");
}

TEST(Checkpoint, MissingFileIsDataError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/rfn/c.json"), DataError);
}

TEST(Random, DerivedSeedsDifferByLabelAndIndex) {
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
  EXPECT_EQ(derive_seed(7, "model"), derive_seed(7, "model"));
}

TEST(RealArray, ShapeProductMustMatchValues) {
  EXPECT_THROW(RealArray({2, 3}, std::vector<double>(5)), DataError);
  EXPECT_NO_THROW(RealArray({2, 3}, std::vector<double>(6)));
}

}  // namespace
}  // namespace rfn::diff
