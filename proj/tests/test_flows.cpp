#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "rfn/flows/flow.hpp"
#include "support.hpp"

namespace rfn::flows {
namespace {

using diff::RealArray;

// A one-column context of zeros, so context-free constructions can be
// expressed with the conditional layers.
RealArray zero_context(std::size_t rows = 1) { return RealArray(rows, 1, 0.0); }

FlowConfig linear_config() {
  FlowConfig c;
  c.hidden_layers = 0;  // a single dense map per network
  return c;
}

// Sets every parameter whose id starts with `prefix` to zero.
void zero_params(ParameterSet& ps, const std::string& prefix) {
  ps.for_each([&](diff::Parameter& p) {
    if (p.id.rfind(prefix, 0) == 0 && p.trainable) p.value.fill(0.0);
  });
}

// Base net producing the standard normal for every context.
void make_standard_base(ParameterSet& ps, const std::string& name) {
  zero_params(ps, name);
  RealArray& bias = ps.at(name + ".l0.bias").value;
  const double inv_softplus_one = std::log(std::numbers::e - 1.0);
  bias = RealArray::row({0.0, 0.0, inv_softplus_one, inv_softplus_one});
}

// Coupling with s = log 2 and t = 0 for every input.
void make_log2_coupling(ParameterSet& ps, const std::string& name, double clamp) {
  zero_params(ps, name);
  ps.at(name + ".s.l0.bias").value[0] = clamp * std::atanh(std::log(2.0) / clamp);
}

struct Single {
  ParameterSet ps;
  ConditionalCoupling coupling;
  Single() {
    Rng rng(1);
    coupling = ConditionalCoupling(ps, "c", 1, linear_config(), rng);
  }
};

TEST(Coupling, ZeroNetworksAreIdentity) {
  Single s;
  zero_params(s.ps, "c");
  Tape t(false);
  const RealArray b = RealArray::row({0.4, 0.6});
  auto out = s.coupling.forward(t, t.constant(b), t.constant(zero_context()));
  EXPECT_EQ(out.points.value(), b);
  EXPECT_EQ(out.log_det.value()[0], 0.0);
  auto back = s.coupling.inverse(t, t.constant(b), t.constant(zero_context()));
  EXPECT_EQ(back.points.value(), b);
}

TEST(Coupling, ScaleLogTwoHalvesSecondCoordinate) {
  Single s;
  make_log2_coupling(s.ps, "c", s.coupling.clamp());
  Tape t(false);
  auto out = s.coupling.forward(t, t.constant(RealArray::row({0.4, 0.6})), t.constant(zero_context()));
  EXPECT_NEAR(out.points.value()[0], 0.4, 1e-15);
  EXPECT_NEAR(out.points.value()[1], 0.3, 1e-14);
  EXPECT_NEAR(out.log_det.value()[0], -std::log(2.0), 1e-14);
  auto back = s.coupling.inverse(t, t.constant(RealArray::row({0.4, 0.3})), t.constant(zero_context()));
  EXPECT_NEAR(back.points.value()[0], 0.4, 1e-15);
  EXPECT_NEAR(back.points.value()[1], 0.6, 1e-14);
  EXPECT_NEAR(back.log_det.value()[0], std::log(2.0), 1e-14);
}

TEST(Coupling, RandomRoundTripAndOppositeLogDets) {
  ParameterSet ps;
  Rng rng(3);
  FlowConfig cfg;
  cfg.hidden = 8;
  ConditionalCoupling c(ps, "c", 3, cfg, rng);
  Tape t(false);
  const RealArray b = normal_array(rng, 100, 2);
  Var ctx = t.constant(normal_array(rng, 1, 3));
  auto fwd = c.forward(t, t.constant(b), ctx);
  auto inv = c.inverse(t, fwd.points, ctx);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(inv.points.value()[i], b[i], 1e-9);
  for (std::size_t r = 0; r < 100; ++r) {
    EXPECT_NEAR(inv.log_det.value()[r], -fwd.log_det.value()[r], 1e-12);
  }
}

TEST(Coupling, ScaleIsClamped) {
  ParameterSet ps;
  Rng rng(3);
  FlowConfig cfg = linear_config();
  cfg.clamp = 2.0;
  ConditionalCoupling c(ps, "c", 1, cfg, rng);
  ps.at("c.s.l0.bias").value[0] = 1e6;
  Tape t(false);
  auto out = c.forward(t, t.constant(RealArray::row({0.1, 0.2})), t.constant(zero_context()));
  EXPECT_NEAR(out.log_det.value()[0], -2.0, 1e-12);
}

TEST(FlowLogProb, EmptyStackStandardNormal) {
  ParameterSet ps;
  Rng rng(1);
  ConditionalBase base(ps, "base", 1, linear_config(), rng);
  make_standard_base(ps, "base");
  FlowStack stack(base, {}, 1);
  Tape t(false);
  auto lp = stack.log_prob(t, t.constant(RealArray::row({0.0, 0.0})), t.constant(zero_context()),
                           FlowMode::evaluation);
  EXPECT_NEAR(lp.value()[0], -std::log(2.0 * std::numbers::pi), 1e-12);
}

TEST(FlowLogProb, LogTwoCouplingGivesLogOneOverPi) {
  ParameterSet ps;
  Rng rng(1);
  ConditionalBase base(ps, "base", 1, linear_config(), rng);
  make_standard_base(ps, "base");
  ConditionalCoupling c(ps, "c", 1, linear_config(), rng);
  make_log2_coupling(ps, "c", c.clamp());
  FlowStack stack(base, {c}, 1);
  Tape t(false);
  auto lp = stack.log_prob(t, t.constant(RealArray::row({0.0, 0.0})), t.constant(zero_context()),
                           FlowMode::evaluation);
  EXPECT_NEAR(lp.value()[0], std::log(1.0 / std::numbers::pi), 1e-9);
}

struct RandomStack {
  ParameterSet ps;
  FlowStack stack;
  RealArray context;
  explicit RandomStack(std::uint64_t seed, std::size_t depth = 3) {
    Rng rng(seed);
    FlowConfig cfg;
    cfg.depth = depth;
    cfg.hidden = 8;
    stack = FlowStack(ps, "flow", 2, cfg, rng);
    // Non-trivial running statistics for the normalization layers.
    ps.for_each([&](diff::Parameter& p) {
      if (p.id.find("running_mean") != std::string::npos) p.value = uniform_array(rng, 1, 2, -0.3, 0.3);
      if (p.id.find("running_var") != std::string::npos) p.value = uniform_array(rng, 1, 2, 0.5, 2.0);
    });
    context = normal_array(rng, 1, 2);
  }
};

TEST(FlowStack, InverseOfForwardRoundTrip) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RandomStack s(seed);
    Rng rng(seed + 100);
    Tape t(false);
    const RealArray x = normal_array(rng, 50, 2);
    auto b = s.stack.inverse(t, t.constant(x), t.constant(s.context), FlowMode::evaluation);
    auto x2 = s.stack.forward(t, b.points, t.constant(s.context));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x2.points.value()[i], x[i], 1e-8);
  }
}

TEST(FlowStack, ComposedLogDetIsSumOfMembers) {
  RandomStack s(4);
  Rng rng(8);
  Tape t(false);
  const RealArray x = normal_array(rng, 20, 2);
  auto pass = s.stack.inverse(t, t.constant(x), t.constant(s.context), FlowMode::evaluation);
  ASSERT_EQ(pass.layer_log_dets.size(), s.stack.layers().size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sum = 0.0;
    for (const Var& ld : pass.layer_log_dets) sum += ld.value()[ld.rows() == 1 ? 0 : r];
    EXPECT_NEAR(pass.log_det.value()[r], sum, 1e-9);
  }
}

TEST(FlowStack, LogDetMatchesFiniteDifferenceJacobian) {
  RandomStack s(6);
  Rng rng(2);
  auto inverse_point = [&](double x, double y) {
    Tape t(false);
    auto p = s.stack.inverse(t, t.constant(RealArray::row({x, y})), t.constant(s.context),
                             FlowMode::evaluation);
    return std::make_pair(p.points.value(), p.log_det.value()[0]);
  };
  for (int i = 0; i < 10; ++i) {
    const double x = standard_normal(rng), y = standard_normal(rng), h = 1e-6;
    const auto px = inverse_point(x + h, y).first, mx = inverse_point(x - h, y).first;
    const auto py = inverse_point(x, y + h).first, my = inverse_point(x, y - h).first;
    const double j11 = (px[0] - mx[0]) / (2 * h), j21 = (px[1] - mx[1]) / (2 * h);
    const double j12 = (py[0] - my[0]) / (2 * h), j22 = (py[1] - my[1]) / (2 * h);
    EXPECT_NEAR(inverse_point(x, y).second, std::log(std::abs(j11 * j22 - j12 * j21)), 1e-6);
  }
}

TEST(FlowStack, DensityIntegratesToOne) {
  RandomStack s(9, 2);
  // Midpoint rule on a wide square that holds essentially all the mass.
  const std::size_t n = 600;
  const double lo = -8.0, hi = 8.0, h = (hi - lo) / n;
  RealArray pts(n * n, 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      pts(i * n + j, 0) = lo + (i + 0.5) * h;
      pts(i * n + j, 1) = lo + (j + 0.5) * h;
    }
  Tape t(false);
  auto lp = s.stack.log_prob(t, t.constant(pts), t.constant(s.context), FlowMode::evaluation);
  double mass = 0.0;
  for (double v : lp.value().values()) mass += std::exp(v) * h * h;
  EXPECT_NEAR(mass, 1.0, 1e-2);
}

TEST(FlowSample, ZeroNoiseIdentityLayersGivesBaseMean) {
  ParameterSet ps;
  Rng rng(1);
  ConditionalBase base(ps, "base", 1, linear_config(), rng);
  ConditionalCoupling c(ps, "c", 1, linear_config(), rng);
  zero_params(ps, "c");
  FlowStack stack(base, {c, Permutation{}, Permutation{}}, 1);
  Tape t(false);
  Var ctx = t.constant(RealArray::row({0.7}));
  auto mean = stack.base_params(t, ctx).mean.value();
  auto x = stack.sample(t, ctx, RealArray(1, 2, 0.0)).value();
  EXPECT_NEAR(x[0], mean[0], 1e-15);
  EXPECT_NEAR(x[1], mean[1], 1e-15);
}

TEST(FlowSample, SamplesHaveFiniteDensity) {
  RandomStack s(11);
  Rng rng(3);
  Tape t(false);
  auto x = s.stack.sample(t, t.constant(s.context), normal_array(rng, 1000, 2));
  auto lp = s.stack.log_prob(t, x, t.constant(s.context), FlowMode::evaluation);
  EXPECT_TRUE(lp.value().all_finite());
}

TEST(FlowSample, EmpiricalMeanOfIdentityStack) {
  ParameterSet ps;
  Rng rng(5);
  ConditionalBase base(ps, "base", 1, linear_config(), rng);
  FlowStack stack(base, {}, 1);
  Tape t(false);
  Var ctx = t.constant(RealArray::row({0.3}));
  auto p = stack.base_params(t, ctx);
  const std::size_t n = 100000;
  auto x = stack.sample(t, ctx, normal_array(rng, n, 2)).value();
  for (std::size_t d = 0; d < 2; ++d) {
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += x(r, d);
    m /= n;
    EXPECT_LT(std::abs(m - p.mean.value()[d]), 4.0 * p.scale.value()[d] / std::sqrt(double(n)));
  }
}

TEST(FlowNorm, IdentityStatisticsInEvaluation) {
  ParameterSet ps;
  FlowNorm norm(ps, "n", FlowConfig{});
  Tape t(false);
  const RealArray v = RealArray::row({0.3, -1.1});
  auto out = norm.normalize(t, t.constant(v), FlowMode::evaluation);
  const double f = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(out.points.value()[0], 0.3 * f, 1e-15);
  EXPECT_NEAR(out.points.value()[1], -1.1 * f, 1e-15);
  EXPECT_NEAR(out.log_det.value()[0], -std::log(1.0 + 1e-5), 1e-15);
}

TEST(FlowNorm, TrainingBatchStatistics) {
  ParameterSet ps;
  FlowNorm norm(ps, "n", FlowConfig{});
  Tape t(false);
  auto out = norm.normalize(t, t.constant(RealArray({2, 2}, {1, 1, 3, 3})), FlowMode::training);
  const double f = 1.0 / std::sqrt(1.0 + 1e-5);
  const std::vector<double> expected = {-f, -f, f, f};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.points.value()[i], expected[i], 1e-12);
  // Running statistics move by the momentum toward (2, 1).
  EXPECT_NEAR(norm.running_mean()[0], 0.2, 1e-15);
  EXPECT_NEAR(norm.running_var()[1], 1.0, 1e-15);
}

TEST(FlowNorm, EvaluationIsDeterministicAndStateless) {
  ParameterSet ps;
  FlowNorm norm(ps, "n", FlowConfig{});
  ps.at("n.running_var").value = RealArray::row({2.0, 0.5});
  Tape t(false);
  const RealArray v = RealArray::row({0.3, -1.1});
  auto a = norm.normalize(t, t.constant(v), FlowMode::evaluation).points.value();
  auto b = norm.normalize(t, t.constant(v), FlowMode::evaluation).points.value();
  EXPECT_EQ(a, b);
  EXPECT_EQ(norm.running_var(), RealArray::row({2.0, 0.5}));
}

TEST(FlowNorm, TrainingNeedsTwoPoints) {
  ParameterSet ps;
  FlowNorm norm(ps, "n", FlowConfig{});
  Tape t(false);
  EXPECT_THROW(norm.normalize(t, t.constant(RealArray::row({1, 2})), FlowMode::training), UsageError);
}

TEST(FlowNorm, RunningVarianceStaysPositive) {
  ParameterSet ps;
  FlowNorm norm(ps, "n", FlowConfig{});
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    Tape t(false);
    norm.normalize(t, t.constant(normal_array(rng, 3, 2)), FlowMode::training);
    EXPECT_GT(norm.running_var()[0], 0.0);
    EXPECT_GT(norm.running_var()[1], 0.0);
  }
}

TEST(FlowStack, IndexedContextMatchesExpandedContext) {
  RandomStack s(12);
  Rng rng(1);
  const RealArray groups = normal_array(rng, 3, 2);
  auto index = std::make_shared<nn::RowIndex>(nn::RowIndex{0, 2, 2, 1, 0, 1});
  RealArray expanded(index->size(), 2);
  for (std::size_t r = 0; r < index->size(); ++r)
    for (std::size_t c = 0; c < 2; ++c) expanded(r, c) = groups((*index)[r], c);
  const RealArray x = normal_array(rng, index->size(), 2);
  Tape t(false);
  auto a = s.stack.log_prob(t, t.constant(x), Context(t.constant(groups), index), FlowMode::training);
  auto b = s.stack.log_prob(t, t.constant(x), t.constant(expanded), FlowMode::training);
  for (std::size_t r = 0; r < x.rows(); ++r) EXPECT_NEAR(a.value()[r], b.value()[r], 1e-12);
}

TEST(FlowStack, ContextChangesTheDensity) {
  RandomStack s(13);
  Tape t(false);
  const RealArray x = RealArray::row({0.2, -0.4});
  auto a = s.stack.log_prob(t, t.constant(x), t.constant(RealArray::row({0.0, 0.0})), FlowMode::evaluation);
  auto b = s.stack.log_prob(t, t.constant(x), t.constant(RealArray::row({1.0, -1.0})), FlowMode::evaluation);
  EXPECT_NE(a.value()[0], b.value()[0]);
}

TEST(FlowStack, ParameterGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RandomStack s(seed + 20, 2);
    Rng rng(seed);
    const RealArray x = normal_array(rng, 6, 2);
    auto objective = [&]() {
      Tape t(false);
      return s.stack.log_prob(t, t.constant(x), t.constant(s.context), FlowMode::training).value().sum();
    };
    auto backward = [&]() {
      s.ps.zero_grad();
      Tape t(true);
      t.backward(diff::sum(s.stack.log_prob(t, t.constant(x), t.constant(s.context), FlowMode::training)));
    };
    const auto report = test::check_parameter_gradients(s.ps, objective, backward, rng, 4);
    EXPECT_LT(report.max_error, 1e-4) << report.worst;
  }
}

TEST(FlowStack, NonTwoColumnPointsRejected) {
  RandomStack s(1);
  Tape t(false);
  EXPECT_THROW(s.stack.log_prob(t, t.constant(RealArray(2, 3)), t.constant(s.context), FlowMode::evaluation),
               UsageError);
}

}  // namespace
}  // namespace rfn::flows
