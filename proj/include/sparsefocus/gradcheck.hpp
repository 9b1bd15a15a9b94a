#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/graph.hpp"

namespace sf {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Builds a fresh graph over the given parameters and returns its scalar loss.
using LossBuilder = std::function<Var(Graph<double>&)>;

/// Central-difference check of every coordinate of `params` against the
/// reverse-mode gradient. Returns max |a - n| / max(|a|, |n|, 1e-12).
inline GradCheckResult grad_check(const LossBuilder& build, const std::vector<Parameter<double>*>& params,
                                  double eps = 1e-5) {
  if (eps < 1e-7 || eps > 1e-3) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");

  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g;
    Var loss = build(g);
    if (!std::isfinite(g.value(loss)[0])) throw NumericError("grad_check: non-finite loss");
    g.backward(loss);
  }

  auto eval = [&]() {
    Graph<double> g;
    Var loss = build(g);
    const double v = g.value(loss)[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss under perturbation");
    return v;
  };

  GradCheckResult res;
  for (auto* p : params) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = eval();
      p->value[i] = orig - eps;
      const double down = eval();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      const double rel = std::abs(analytic - numeric) / denom;
      ++res.coordinates;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p->name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace sf
