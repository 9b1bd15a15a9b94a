#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "sparsefocus/adam.hpp"
#include "sparsefocus/checkpoint.hpp"
#include "sparsefocus/gradcheck_suite.hpp"
#include "sparsefocus/ops.hpp"
#include "sparsefocus/rng.hpp"

namespace sf {
namespace {

using TD = Tensor<double>;

const TD& run(Graph<double>& g, Var v) { return g.value(v); }

// Direct seven-loop cross-correlation used as the reference for conv2d.
TD naive_conv(const TD& x, const TD& w, const TD* b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  TD out({n, f, ho, wo});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          double s = b ? (*b)[o] : 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long yy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long xq = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
                if (yy < 0 || xq < 0 || yy >= static_cast<long>(h) || xq >= static_cast<long>(wd)) continue;
                s += x.at(in, ic, static_cast<std::size_t>(yy), static_cast<std::size_t>(xq)) * w.at(o, ic, i, j);
              }
          out.at(in, o, y, xx) = s;
        }
  return out;
}

TEST(Conv2d, IdentityScalingKernel) {
  Graph<double> g;
  Var y = conv2d(g, g.constant(TD({1, 1, 3, 3}, 1.0)), g.constant(TD({1, 1, 1, 1}, 2.0)), g.constant(TD({1}, 0.0)), 1, 0);
  ASSERT_EQ(run(g, y).dims(), (Dims{1, 1, 3, 3}));
  for (double v : run(g, y).data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, HandCrossCorrelation) {
  Graph<double> g;
  Var y = conv2d(g, g.constant(TD({1, 1, 2, 2}, {1, 2, 3, 4})), g.constant(TD({1, 1, 2, 2}, {1, 0, 0, 1})),
                 g.constant(TD({1}, 0.0)), 1, 0);
  ASSERT_EQ(run(g, y).size(), 1u);
  EXPECT_EQ(run(g, y)[0], 5.0);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  Rng rng(3);
  TD x({2, 3, 6, 5});
  for (double& v : x.data()) v = rng.uniform(-1, 1);
  Graph<double> g;
  Var y = conv2d(g, g.constant(x), g.constant(TD({4, 3, 3, 3}, 0.0)), g.constant(TD({4}, 7.0)), 2, 1);
  for (double v : run(g, y).data()) EXPECT_EQ(v, 7.0);
}

TEST(Conv2d, MatchesNaiveLoopAcrossStridesAndPadding) {
  Rng rng(11);
  for (std::size_t stride : {1, 2, 4})
    for (std::size_t pad : {0, 1, 3}) {
      TD x({2, 3, 9, 8}), w({5, 3, 4, 3}), b({5});
      for (double& v : x.data()) v = rng.uniform(-1, 1);
      for (double& v : w.data()) v = rng.uniform(-1, 1);
      for (double& v : b.data()) v = rng.uniform(-1, 1);
      Graph<double> g;
      const TD got = run(g, conv2d(g, g.constant(x), g.constant(w), g.constant(b), stride, pad));
      const TD want = naive_conv(x, w, &b, stride, pad);
      ASSERT_EQ(got.dims(), want.dims());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(Conv2d, OutputExtentFormula) {
  Graph<double> g;
  Var y = conv2d(g, g.constant(TD({1, 1, 288, 288})), g.constant(TD({8, 1, 4, 4})), Var{}, 4, 0);
  EXPECT_EQ(run(g, y).dims(), (Dims{1, 8, 72, 72}));
  Var z = conv2d(g, y, g.constant(TD({16, 8, 3, 3})), Var{}, 2, 1);
  EXPECT_EQ(run(g, z).dims(), (Dims{1, 16, 36, 36}));
}

TEST(Conv2d, ShapeErrorNamesAxis) {
  Graph<double> g;
  try {
    conv2d(g, g.constant(TD({1, 3, 5, 5})), g.constant(TD({2, 2, 3, 3})), Var{}, 1, 0);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.axis(), "channels");
  }
  EXPECT_THROW(conv2d(g, g.constant(TD({1, 1, 2, 2})), g.constant(TD({1, 1, 3, 3})), Var{}, 1, 0), ShapeError);
}

TEST(Conv2d, Deterministic) {
  Rng rng(5);
  Tensor<float> x({2, 4, 16, 16}), w({8, 4, 7, 7});
  for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
  for (float& v : w.data()) v = static_cast<float>(rng.uniform(-1, 1));
  Graph<float> g1, g2;
  const auto a = g1.value(conv2d(g1, g1.constant(x), g1.constant(w), Var{}, 1, 3));
  const auto b = g2.value(conv2d(g2, g2.constant(x), g2.constant(w), Var{}, 1, 3));
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.raw(), b.raw(), a.size() * sizeof(float)), 0);
}

BatchNormStats<double> fresh_stats(std::size_t c) {
  return {Parameter<double>("rm", TD({c}, 0.0), false), Parameter<double>("rv", TD({c}, 1.0), false)};
}

TEST(BatchNorm, TrainModeStandardizes) {
  Rng rng(2);
  TD x({8, 2, 5, 5});
  for (double& v : x.data()) v = 5.0 + 2.0 * rng.normal();
  auto stats = fresh_stats(2);
  Graph<double> g;
  const TD y = run(g, batchnorm2d(g, g.constant(x), g.constant(TD({2}, 1.0)), g.constant(TD({2}, 0.0)), stats,
                                  NormMode::train, 0.1, 1e-5));
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t h = 0; h < 5; ++h)
        for (std::size_t w = 0; w < 5; ++w) {
          s += y.at(i, c, h, w);
          s2 += y.at(i, c, h, w) * y.at(i, c, h, w);
          ++n;
        }
    const double mean = s / n;
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(s2 / n - mean * mean, 1.0, 1e-3);
  }
}

TEST(BatchNorm, AffineOnStandardizedInput) {
  Rng rng(4);
  TD x({16, 1, 4, 4});
  for (double& v : x.data()) v = rng.normal();
  auto stats = fresh_stats(1);
  Graph<double> g;
  const TD y = run(g, batchnorm2d(g, g.constant(x), g.constant(TD({1}, 2.0)), g.constant(TD({1}, 3.0)), stats,
                                  NormMode::train, 0.1, 1e-5));
  double s = 0, s2 = 0;
  for (double v : y.data()) {
    s += v;
    s2 += v * v;
  }
  const double mean = s / y.size();
  EXPECT_NEAR(mean, 3.0, 1e-6);
  EXPECT_NEAR(std::sqrt(s2 / y.size() - mean * mean), 2.0, 1e-4);
}

TEST(BatchNorm, HandComputedChannel) {
  auto stats = fresh_stats(1);
  Graph<double> g;
  const TD y = run(g, batchnorm2d(g, g.constant(TD({1, 1, 2, 2}, {1, 2, 3, 4})), g.constant(TD({1}, 1.0)),
                                  g.constant(TD({1}, 0.0)), stats, NormMode::train, 0.1, 1e-5));
  const double denom = std::sqrt(1.25 + 1e-5);
  const double want[] = {-1.5 / denom, -0.5 / denom, 0.5 / denom, 1.5 / denom};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y[i], want[i], 1e-12);
  // running stats: momentum 0.1 towards mean 2.5 and unbiased variance 5/3
  EXPECT_NEAR(stats.mean.value[0], 0.25, 1e-12);
  EXPECT_NEAR(stats.var.value[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-12);
}

TEST(BatchNorm, EvalModeIsPureFunctionOfRunningStats) {
  BatchNormStats<double> stats{Parameter<double>("rm", TD({1}, 2.0), false),
                               Parameter<double>("rv", TD({1}, 4.0), false)};
  Graph<double> g;
  const TD x({1, 1, 1, 3}, {2.0, 4.0, 0.0});
  const TD y = run(g, batchnorm2d(g, g.constant(x), g.constant(TD({1}, 3.0)), g.constant(TD({1}, 1.0)), stats,
                                  NormMode::eval, 0.1, 1e-5));
  const double s = std::sqrt(4.0 + 1e-5);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0 + 3.0 * 2.0 / s, 1e-12);
  EXPECT_NEAR(y[2], 1.0 - 3.0 * 2.0 / s, 1e-12);
  EXPECT_EQ(stats.mean.value[0], 2.0);
  EXPECT_EQ(stats.var.value[0], 4.0);
  Graph<double> g2;
  const TD y2 = run(g2, batchnorm2d(g2, g2.constant(x), g2.constant(TD({1}, 3.0)), g2.constant(TD({1}, 1.0)), stats,
                                    NormMode::eval, 0.1, 1e-5));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(y[i], y2[i]);
}

TEST(BatchNorm, NonPositiveEpsIsConfigError) {
  auto stats = fresh_stats(1);
  Graph<double> g;
  EXPECT_THROW(batchnorm2d(g, g.constant(TD({1, 1, 2, 2})), g.constant(TD({1}, 1.0)), g.constant(TD({1}, 0.0)),
                           stats, NormMode::train, 0.1, 0.0),
               ConfigError);
}

TEST(Activation, Relu) {
  Graph<double> g;
  const TD y = run(g, activation(g, g.constant(TD({3}, {-1, 0, 2})), Activation::relu));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
}

TEST(Activation, SigmoidAndHardswish) {
  Graph<double> g;
  EXPECT_EQ(run(g, activation(g, g.constant(TD({1}, 0.0)), Activation::sigmoid))[0], 0.5);
  const TD hs = run(g, activation(g, g.constant(TD({4}, {3, -3, 1, -1})), Activation::hardswish));
  auto ref = [](double x) { return x * std::clamp(x + 3.0, 0.0, 6.0) / 6.0; };
  EXPECT_EQ(hs[0], 3.0);
  EXPECT_EQ(hs[1], 0.0);
  EXPECT_NEAR(hs[2], ref(1.0), 1e-15);
  EXPECT_NEAR(hs[3], ref(-1.0), 1e-15);
}

TEST(Activation, SigmoidStrictlyInsideUnitInterval) {
  Graph<float> g;
  const auto y = g.value(activation(g, g.constant(Tensor<float>({5}, {-30, -5, 0, 5, 30})), Activation::sigmoid));
  for (float v : y.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Pool2d, MaxAndAvgOnTwoByTwo) {
  Graph<double> g;
  const TD x({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(run(g, pool2d(g, g.constant(x), PoolKind::max, 2, 2))[0], 4.0);
  EXPECT_EQ(run(g, pool2d(g, g.constant(x), PoolKind::avg, 2, 2))[0], 2.5);
}

TEST(Pool2d, MaxOverRamp) {
  TD x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  Graph<double> g;
  const TD y = run(g, pool2d(g, g.constant(x), PoolKind::max, 2, 2));
  ASSERT_EQ(y.dims(), (Dims{1, 1, 2, 2}));
  EXPECT_EQ(y[0], 5.0);
  EXPECT_EQ(y[1], 7.0);
  EXPECT_EQ(y[2], 13.0);
  EXPECT_EQ(y[3], 15.0);
}

TEST(Pool2d, GlobalMaxAndAdaptiveAverage) {
  TD x({1, 2, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i % 16) * (i < 16 ? 1.0 : -1.0);
  Graph<double> g;
  const TD m = run(g, global_max_pool(g, g.constant(x)));
  ASSERT_EQ(m.dims(), (Dims{1, 2}));
  EXPECT_EQ(m[0], 15.0);
  EXPECT_EQ(m[1], 0.0);
  const TD a = run(g, adaptive_avg_pool2d(g, g.constant(x), 2, 2));
  EXPECT_EQ(a[0], (0 + 1 + 4 + 5) / 4.0);
  EXPECT_EQ(a[3], (10 + 11 + 14 + 15) / 4.0);
}

TEST(Linear, Examples) {
  Graph<double> g;
  const TD x({2, 2}, {1, -2, 3, 4});
  const TD id = run(g, linear(g, g.constant(x), g.constant(TD({2, 2}, {1, 0, 0, 1})), g.constant(TD({2}, 0.0))));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(id[i], x[i]);
  EXPECT_EQ(run(g, linear(g, g.constant(TD({1, 2}, {2, 3})), g.constant(TD({1, 2}, {1, 1})), g.constant(TD({1}, 1.0))))[0],
            6.0);
  const TD zb = run(g, linear(g, g.constant(x), g.constant(TD({3, 2}, 0.0)), g.constant(TD({3}, {4, 5, 6}))));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(zb[r * 3 + c], 4.0 + c);
  EXPECT_THROW(linear(g, g.constant(x), g.constant(TD({3, 5})), Var{}), ShapeError);
}

TEST(Loss, BceExamples) {
  Graph<double> g;
  EXPECT_NEAR(run(g, loss_bce(g, g.constant(TD({4}, 0.5)), TD({4}, 0.5)))[0], std::log(2.0), 1e-12);
  EXPECT_NEAR(run(g, loss_bce(g, g.constant(TD({1}, 0.9)), TD({1}, 1.0)))[0], -std::log(0.9), 1e-12);
  const double at_target = run(g, loss_bce(g, g.constant(TD({2}, {0.0, 1.0})), TD({2}, {0.0, 1.0})))[0];
  EXPECT_LE(at_target, 1e-6 * std::abs(std::log(1e-7)));
  EXPECT_GE(at_target, 0.0);
  for (double p : {1e-3, 0.2, 0.5}) {
    const double perturbed = run(g, loss_bce(g, g.constant(TD({2}, {p, 1.0 - p})), TD({2}, {0.0, 1.0})))[0];
    EXPECT_GT(perturbed, at_target);
  }
}

TEST(Loss, L2Examples) {
  Graph<double> g;
  EXPECT_EQ(run(g, loss_l2(g, g.constant(TD({3}, {1, 2, 3})), TD({3}, {1, 2, 3})))[0], 0.0);
  EXPECT_EQ(run(g, loss_l2(g, g.constant(TD({2}, {1, 3})), TD({2}, {2, 1})))[0], 2.5);
  EXPECT_EQ(run(g, loss_l2(g, g.constant(TD({1}, {4.5})), TD({1}, {1.5})))[0], 9.0);
  EXPECT_THROW(loss_l2(g, g.constant(TD()), TD()), UsageError);
}

TEST(Backward, LinearAndSquare) {
  Parameter<double> w("w", TD({3}, {0.5, -1.0, 2.0}));
  const TD x({3}, {4.0, 5.0, -6.0});
  {
    Graph<double> g;
    g.backward(sum(g, mul(g, g.param(w), g.constant(x))));
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(w.grad[i], x[i]);

  Parameter<double> s("s", TD({1}, 3.0));
  Graph<double> g;
  Var ws = g.param(s);
  Var loss = sum(g, mul(g, ws, ws));
  g.backward(loss);
  EXPECT_EQ(s.grad[0], 6.0);
  g.backward(loss);
  EXPECT_EQ(s.grad[0], 12.0);
  s.zero_grad();
  for (double v : s.grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonScalarIsUsageError) {
  Parameter<double> w("w", TD({2}, 1.0));
  Graph<double> g;
  EXPECT_THROW(g.backward(g.param(w)), UsageError);
}

TEST(GradCheck, QuadraticIsNearExact) {
  Parameter<double> w("w", TD({4}, {0.3, -1.2, 2.5, 0.7}));
  const auto r = grad_check([&](Graph<double>& g) {
    Var v = g.param(w);
    return sum(g, mul(g, v, v));
  }, {&w}, 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.coordinates, 4u);
}

TEST(GradCheck, EpsOutsideRangeRejected) {
  Parameter<double> w("w", TD({1}, 1.0));
  auto build = [&](Graph<double>& g) { return sum(g, g.param(w)); };
  EXPECT_THROW(grad_check(build, {&w}, 1e-2), ConfigError);
  EXPECT_THROW(grad_check(build, {&w}, 1e-9), ConfigError);
}

TEST(GradCheck, EveryLayerWithinToleranceOverTenInits) {
  for (const auto& row : run_gradcheck_suite(10, 1e-5)) {
    EXPECT_LE(row.max_rel_error, 1e-5) << row.layer;
    EXPECT_GT(row.coordinates, 0u) << row.layer;
  }
}

TEST(GradCheck, BrokenBackwardIsDetected) {
  const auto rows = run_gradcheck_suite(2, 1e-5, true);
  ASSERT_EQ(rows.back().layer, "fault/broken_square");
  EXPECT_GT(rows.back().max_rel_error, 0.1);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Parameter<float> p("p", Tensor<float>({3}, {1.0f, -2.0f, 0.5f}));
  Adam<float> opt({&p}, AdamConfig{1e-3});
  const auto before = std::vector<float>(p.value.data().begin(), p.value.data().end());
  opt.step();
  EXPECT_EQ(opt.step_count(), 1u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p.value[i], before[i]);
}

TEST(Adam, FirstStepMagnitudeIsLr) {
  Parameter<double> p("p", TD({3}, {1.0, -2.0, 0.5}));
  for (std::size_t i = 0; i < 3; ++i) p.grad[i] = (i == 1 ? -4.0 : 0.25);
  Adam<double> opt({&p}, AdamConfig{0.01});
  opt.step();
  EXPECT_NEAR(p.value[0], 1.0 - 0.01, 1e-8);
  EXPECT_NEAR(p.value[1], -2.0 + 0.01, 1e-8);
  EXPECT_NEAR(p.value[2], 0.5 - 0.01, 1e-7);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_GE(opt.second_moment(0)[i], 0.0);
}

TEST(Adam, MatchesClosedFormOverSeveralSteps) {
  Parameter<double> p("p", TD({1}, 0.0));
  Adam<double> opt({&p}, AdamConfig{0.1});
  double m = 0, v = 0, x = 0;
  const double grads[] = {1.0, -0.5, 2.0, 0.25};
  for (int t = 1; t <= 4; ++t) {
    p.grad[0] = grads[t - 1];
    opt.step();
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.value[0], x, 1e-12);
  }
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("sf_tc_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

using Checkpoint = TempDir;

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST_F(Checkpoint, RoundTripIsBitExact) {
  Rng rng(9);
  Parameter<float> a("stem.weight", Tensor<float>({2, 1, 3, 3})), b("head.bias", Tensor<float>({1}));
  for (float& v : a.value.data()) v = static_cast<float>(rng.normal());
  b.value[0] = -0.0f;
  a.value[4] = std::numeric_limits<float>::denorm_min();
  save_checkpoint(dir_ / "m.sfnn", {&a, &b});
  Parameter<float> a2("stem.weight", Tensor<float>({2, 1, 3, 3})), b2("head.bias", Tensor<float>({1}));
  load_checkpoint(dir_ / "m.sfnn", {&a2, &b2});
  EXPECT_EQ(std::memcmp(a.value.raw(), a2.value.raw(), a.value.size() * 4), 0);
  EXPECT_EQ(std::memcmp(b.value.raw(), b2.value.raw(), 4), 0);
  save_checkpoint(dir_ / "m2.sfnn", {&a2, &b2});
  EXPECT_EQ(slurp(dir_ / "m.sfnn"), slurp(dir_ / "m2.sfnn"));
}

TEST_F(Checkpoint, ByteLayout) {
  Parameter<float> p("w", Tensor<float>({2}, {1.0f, -2.0f}));
  save_checkpoint(dir_ / "x.sfnn", {&p});
  const auto bytes = slurp(dir_ / "x.sfnn");
  auto u16 = [&](std::size_t o) { return static_cast<unsigned>(static_cast<unsigned char>(bytes[o])) |
                                         static_cast<unsigned>(static_cast<unsigned char>(bytes[o + 1])) << 8; };
  auto u32 = [&](std::size_t o) { return u16(o) | u16(o + 2) << 16; };
  ASSERT_GE(bytes.size(), 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SFNN");
  EXPECT_EQ(u16(4), 1u);
  EXPECT_EQ(u32(6), 1u);
  // name, rank, dims, then little-endian floats
  EXPECT_EQ(u32(10), 1u);
  EXPECT_EQ(bytes[14], 'w');
  EXPECT_EQ(u32(15), 1u);
  EXPECT_EQ(u32(19), 2u);
  float f[2];
  std::memcpy(f, bytes.data() + 23, 8);
  EXPECT_EQ(f[0], 1.0f);
  EXPECT_EQ(f[1], -2.0f);
  EXPECT_EQ(bytes.size(), 31u);
}

TEST_F(Checkpoint, MismatchAndCorruptionDetected) {
  Parameter<float> p("w", Tensor<float>({2}, 1.0f));
  save_checkpoint(dir_ / "x.sfnn", {&p});
  Parameter<float> wrong_shape("w", Tensor<float>({3}));
  EXPECT_THROW(load_checkpoint(dir_ / "x.sfnn", {&wrong_shape}), ShapeError);
  Parameter<float> wrong_name("v", Tensor<float>({2}));
  EXPECT_THROW(load_checkpoint(dir_ / "x.sfnn", {&wrong_name}), IoError);
  auto bytes = slurp(dir_ / "x.sfnn");
  bytes.resize(bytes.size() - 3);
  std::ofstream(dir_ / "short.sfnn", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(read_checkpoint(dir_ / "short.sfnn"), IoError);
  EXPECT_THROW(read_checkpoint(dir_ / "absent.sfnn"), IoError);
}

TEST(TensorType, DimsProductMatchesData) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_TRUE(t.all_finite());
  t[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

}  // namespace
}  // namespace sf
