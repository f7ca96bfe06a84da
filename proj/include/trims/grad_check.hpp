#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "trims/autograd.hpp"

namespace trims {

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool finite = true;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed(double tol) const { return finite && max_rel_error < tol; }
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences. `fn(graph, vars)` must build the function from `vars`, which
// alias `params` in order. Relative error per coordinate is
// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
template <class T, class Fn>
GradCheckReport grad_check(Fn&& fn, std::vector<Tensor<T>>& params, T step = T(1e-5)) {
  std::vector<Tensor<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.emplace_back(p.shape());
  {
    Graph<T> g;
    std::vector<Var<T>> vars;
    for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(g.parameter(params[i], &analytic[i]));
    Var<T> out = fn(g, std::span<const Var<T>>(vars));
    g.backward(out);
  }

  auto evaluate = [&]() -> T {
    Graph<T> g;
    std::vector<Var<T>> vars;
    for (auto& p : params) vars.push_back(g.parameter(p, nullptr));
    return fn(g, std::span<const Var<T>>(vars)).value()[0];
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T saved = data[j];
      data[j] = saved + step;
      const T plus = evaluate();
      data[j] = saved - step;
      const T minus = evaluate();
      data[j] = saved;
      const double numeric = (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * static_cast<double>(step));
      const double a = static_cast<double>(analytic[pi][j]);
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.finite = false;
        report.max_rel_error = std::numeric_limits<double>::infinity();
        report.worst_param = pi;
        report.worst_index = j;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
        return report;
      }
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_index = j;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace trims
