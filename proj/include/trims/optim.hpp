#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "trims/error.hpp"
#include "trims/tensor.hpp"

namespace trims {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Global L2 norm bound on the gradient; 0 disables clipping.
  double grad_clip = 0.0;
};

template <class T>
struct OptimState {
  AdamWConfig hp;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  OptimState() = default;
  OptimState(AdamWConfig config, std::span<const Tensor<T>> params) : hp(config) {
    for (const auto& p : params) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
  }
};

struct StepReport {
  bool applied = true;
  double grad_norm = 0.0;
  std::string skipped_reason;
};

// Linear warmup followed by cosine decay to zero over `total_steps`.
inline double cosine_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps, double warmup_ratio) {
  if (total_steps == 0) return base_lr;
  const auto warmup = static_cast<std::uint64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double denom = static_cast<double>(std::max<std::uint64_t>(1, total_steps - warmup));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / denom);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// One AdamW update with decoupled weight decay. Decay applies to matrices
// only; vectors (biases, norm gains) are left undecayed. A non-finite gradient
// leaves parameters and state untouched and is reported.
template <class T>
StepReport optim_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, OptimState<T>& state,
                      double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("optim_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                     " grads, " + std::to_string(state.m.size()) + " moment slots");
  }
  StepReport report;
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape()) {
      throw ShapeError("optim_step: parameter " + std::to_string(i) + " shape " + shape_str(params[i].shape()) +
                       " vs gradient " + shape_str(grads[i].shape()));
    }
    for (T gv : grads[i].data()) sq += static_cast<double>(gv) * static_cast<double>(gv);
  }
  report.grad_norm = std::sqrt(sq);
  if (!std::isfinite(report.grad_norm)) {
    report.applied = false;
    report.skipped_reason = "non-finite gradient";
    return report;
  }
  double clip_scale = 1.0;
  if (state.hp.grad_clip > 0.0 && report.grad_norm > state.hp.grad_clip) {
    clip_scale = state.hp.grad_clip / report.grad_norm;
  }

  state.step += 1;
  const double b1 = state.hp.beta1, b2 = state.hp.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const double decay = params[i].rank() >= 2 ? state.hp.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]) * clip_scale;
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + state.hp.eps) + decay * static_cast<double>(p[j]);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - lr * update);
    }
  }
  return report;
}

}  // namespace trims
