#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sparsefocus/gradcheck.hpp"
#include "sparsefocus/ops.hpp"
#include "sparsefocus/rng.hpp"

namespace sf {

struct GradCheckRow {
  std::string layer;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t inits = 0;
};

namespace detail {

inline Parameter<double> random_param(const std::string& name, Dims dims, Rng& rng, double lo = -1.0,
                                      double hi = 1.0) {
  Parameter<double> p(name, Tensor<double>(std::move(dims)));
  for (double& v : p.value.data()) v = rng.uniform(lo, hi);
  return p;
}

inline Tensor<double> random_tensor(Dims dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(dims));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Contracts an op output with a fixed random tensor so every output entry
// carries a distinct weight into the scalar loss.
inline Var project(Graph<double>& g, Var y, const Tensor<double>& r) { return sum(g, mul(g, y, g.constant(r))); }

inline Tensor<double> projection_for(const Dims& dims, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor(dims, rng);
}

// y = x * x with a backward pass that is off by 50%; used to prove the
// checker catches broken gradients.
inline Var broken_square(Graph<double>& g, Var x) {
  Tensor<double> out = g.value(x);
  for (double& v : out.data()) v *= v;
  return g.record(std::move(out), {x}, [=](Graph<double>& gr, Var self) {
    Tensor<double>* dx = gr.grad_of(x);
    if (!dx) return;
    const Tensor<double>& xv = gr.value(x);
    for (std::size_t i = 0; i < dx->size(); ++i) (*dx)[i] += 3.0 * xv[i] * gr.grad(self)[i];
  });
}

}  // namespace detail

/// One layer-level check: builds fresh random parameters for a seed and
/// returns the grad_check result.
struct GradCheckCase {
  std::string layer;
  std::function<GradCheckResult(std::uint64_t seed, double eps)> run;
};

inline std::vector<GradCheckCase> gradcheck_cases(bool include_broken = false) {
  using detail::project;
  using detail::projection_for;
  using detail::random_param;
  std::vector<GradCheckCase> cases;

  cases.push_back({"conv2d", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     auto x = random_param("x", {2, 3, 7, 7}, rng);
                     auto w = random_param("w", {4, 3, 3, 3}, rng, -0.5, 0.5);
                     auto b = random_param("b", {4}, rng);
                     const auto r = projection_for({2, 4, 4, 4}, seed + 1);
                     return grad_check(
                         [&](Graph<double>& g) {
                           return project(g, conv2d(g, g.param(x), g.param(w), g.param(b), 2, 1), r);
                         },
                         {&x, &w, &b}, eps);
                   }});

  for (NormMode mode : {NormMode::train, NormMode::eval}) {
    cases.push_back({mode == NormMode::train ? "batchnorm2d/train" : "batchnorm2d/eval",
                     [mode](std::uint64_t seed, double eps) {
                       Rng rng(seed);
                       auto x = random_param("x", {3, 2, 4, 4}, rng, -2.0, 3.0);
                       auto gamma = random_param("gamma", {2}, rng, 0.5, 1.5);
                       auto beta = random_param("beta", {2}, rng);
                       BatchNormStats<double> stats{random_param("running_mean", {2}, rng),
                                                    random_param("running_var", {2}, rng, 0.5, 2.0)};
                       stats.mean.trainable = stats.var.trainable = false;
                       const auto r = projection_for({3, 2, 4, 4}, seed + 1);
                       return grad_check(
                           [&](Graph<double>& g) {
                             return project(g,
                                            batchnorm2d(g, g.param(x), g.param(gamma), g.param(beta), stats, mode,
                                                        0.1, 1e-5),
                                            r);
                           },
                           {&x, &gamma, &beta}, eps);
                     }});
  }

  for (Activation act : {Activation::relu, Activation::hardswish, Activation::sigmoid}) {
    const std::string name = act == Activation::relu ? "relu" : (act == Activation::hardswish ? "hardswish" : "sigmoid");
    cases.push_back({name, [act](std::uint64_t seed, double eps) {
                       Rng rng(seed);
                       auto x = random_param("x", {2, 3, 4, 4}, rng, -4.0, 4.0);
                       const auto r = projection_for({2, 3, 4, 4}, seed + 1);
                       return grad_check([&](Graph<double>& g) { return project(g, activation(g, g.param(x), act), r); },
                                         {&x}, eps);
                     }});
  }

  for (PoolKind kind : {PoolKind::max, PoolKind::avg}) {
    cases.push_back({kind == PoolKind::max ? "pool2d/max" : "pool2d/avg", [kind](std::uint64_t seed, double eps) {
                       Rng rng(seed);
                       auto x = random_param("x", {2, 2, 6, 6}, rng);
                       const auto r = projection_for({2, 2, 2, 2}, seed + 1);
                       return grad_check(
                           [&](Graph<double>& g) { return project(g, pool2d(g, g.param(x), kind, 3, 2), r); }, {&x},
                           eps);
                     }});
  }

  cases.push_back({"global_max_pool", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     auto x = random_param("x", {2, 3, 4, 4}, rng);
                     const auto r = projection_for({2, 3}, seed + 1);
                     return grad_check([&](Graph<double>& g) { return project(g, global_max_pool(g, g.param(x)), r); },
                                       {&x}, eps);
                   }});

  cases.push_back({"adaptive_avg_pool2d", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     auto x = random_param("x", {2, 2, 5, 5}, rng);
                     const auto r = projection_for({2, 2, 3, 3}, seed + 1);
                     return grad_check(
                         [&](Graph<double>& g) { return project(g, adaptive_avg_pool2d(g, g.param(x), 3, 3), r); },
                         {&x}, eps);
                   }});

  cases.push_back({"linear", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     auto x = random_param("x", {4, 5}, rng);
                     auto w = random_param("w", {3, 5}, rng);
                     auto b = random_param("b", {3}, rng);
                     const auto r = projection_for({4, 3}, seed + 1);
                     return grad_check(
                         [&](Graph<double>& g) { return project(g, linear(g, g.param(x), g.param(w), g.param(b)), r); },
                         {&x, &w, &b}, eps);
                   }});

  cases.push_back({"loss_bce", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     auto p = random_param("p", {2, 1, 3, 3}, rng, 0.05, 0.95);
                     const auto t = detail::random_tensor({2, 1, 3, 3}, rng, 0.0, 1.0);
                     return grad_check([&](Graph<double>& g) { return loss_bce(g, g.param(p), t); }, {&p}, eps);
                   }});

  cases.push_back({"loss_l2", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     auto p = random_param("p", {6}, rng, -3.0, 3.0);
                     const auto t = detail::random_tensor({6}, rng, -3.0, 3.0);
                     return grad_check([&](Graph<double>& g) { return loss_l2(g, g.param(p), t); }, {&p}, eps);
                   }});

  cases.push_back({"stack/conv-bn-relu-pool-linear-l2", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     const auto x = detail::random_tensor({3, 1, 8, 8}, rng);
                     auto w = random_param("conv.w", {4, 1, 3, 3}, rng, -0.5, 0.5);
                     auto gamma = random_param("bn.gamma", {4}, rng, 0.5, 1.5);
                     auto beta = random_param("bn.beta", {4}, rng);
                     BatchNormStats<double> stats{Parameter<double>("rm", Tensor<double>({4}), false),
                                                  Parameter<double>("rv", Tensor<double>({4}, 1.0), false)};
                     auto lw = random_param("lin.w", {2, 16}, rng);
                     auto lb = random_param("lin.b", {2}, rng);
                     const auto t = detail::random_tensor({6}, rng, -2.0, 2.0);
                     return grad_check(
                         [&](Graph<double>& g) {
                           Var h = conv2d(g, g.constant(x), g.param(w), Var{}, 1, 1);
                           h = batchnorm2d(g, h, g.param(gamma), g.param(beta), stats, NormMode::train, 0.1, 1e-5);
                           h = activation(g, h, Activation::relu);
                           h = pool2d(g, h, PoolKind::max, 4, 4);
                           h = reshape(g, h, Dims{3, 16});
                           h = reshape(g, linear(g, h, g.param(lw), g.param(lb)), Dims{6});
                           return loss_l2(g, h, t);
                         },
                         {&w, &gamma, &beta, &lw, &lb}, eps);
                   }});

  cases.push_back({"stack/conv-sigmoid-bce", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     const auto x = detail::random_tensor({2, 3, 4, 4}, rng);
                     auto w = random_param("head.w", {1, 3, 1, 1}, rng);
                     auto b = random_param("head.b", {1}, rng);
                     const auto t = detail::random_tensor({2, 1, 4, 4}, rng, 0.0, 1.0);
                     return grad_check(
                         [&](Graph<double>& g) {
                           Var y = conv2d(g, g.constant(x), g.param(w), g.param(b), 1, 0);
                           return loss_bce(g, activation(g, y, Activation::sigmoid), t);
                         },
                         {&w, &b}, eps);
                   }});

  if (include_broken) {
    cases.push_back({"fault/broken_square", [](std::uint64_t seed, double eps) {
                       Rng rng(seed);
                       auto x = random_param("x", {5}, rng, 0.5, 1.5);
                       return grad_check([&](Graph<double>& g) { return sum(g, detail::broken_square(g, g.param(x))); },
                                         {&x}, eps);
                     }});
  }
  return cases;
}

/// Runs every case over `inits` seeds and reports the worst error per layer.
inline std::vector<GradCheckRow> run_gradcheck_suite(std::size_t inits, double eps, bool include_broken = false,
                                                     std::uint64_t seed = 2024) {
  std::vector<GradCheckRow> rows;
  for (const auto& c : gradcheck_cases(include_broken)) {
    GradCheckRow row{c.layer, 0.0, 0, inits};
    for (std::size_t k = 0; k < inits; ++k) {
      const GradCheckResult r = c.run(derive_seed(seed, k), eps);
      row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
      row.coordinates += r.coordinates;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sf
