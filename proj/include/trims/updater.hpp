#pragma once

#include <cstdint>
#include <span>

#include "trims/model.hpp"
#include "trims/optim.hpp"

namespace trims {

struct OptimConfig {
  double lr = 1e-3;
  double weight_decay = 0.1;
  double warmup_ratio = 0.03;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

// Owns the gradient buffers and optimizer state for one checkpoint and applies
// batch-averaged AdamW updates under the warmup + cosine schedule.
template <class T>
class ParamUpdater {
 public:
  ParamUpdater(Checkpoint<T>& ck, const OptimConfig& cfg, std::uint64_t total_steps)
      : ck_(ck), cfg_(cfg), grads_(ck.zeros_like()), total_steps_(total_steps) {
    AdamWConfig hp;
    hp.lr = cfg.lr;
    hp.beta1 = cfg.beta1;
    hp.beta2 = cfg.beta2;
    hp.weight_decay = cfg.weight_decay;
    hp.grad_clip = cfg.grad_clip;
    state_ = OptimState<T>(hp, std::span<const Tensor<T>>(ck.params.tensors()));
  }

  NamedTensors<T>& grads() noexcept { return grads_; }

  void zero_grad() {
    for (auto& g : grads_.tensors()) g.fill(T(0));
  }

  // Averages accumulated gradients over `batch` examples and updates.
  StepReport step(std::size_t batch) {
    if (batch > 1) {
      const T inv = T(1) / static_cast<T>(batch);
      for (auto& g : grads_.tensors())
        for (auto& v : g.data()) v *= inv;
    }
    const double lr = cosine_lr(cfg_.lr, steps_, total_steps_, cfg_.warmup_ratio);
    auto report = optim_step<T>(std::span<Tensor<T>>(ck_.params.tensors()),
                                std::span<const Tensor<T>>(grads_.tensors()), state_, lr);
    ++steps_;
    ck_.step = steps_;
    zero_grad();
    return report;
  }

  std::uint64_t steps_taken() const noexcept { return steps_; }

 private:
  Checkpoint<T>& ck_;
  OptimConfig cfg_;
  NamedTensors<T> grads_;
  OptimState<T> state_;
  std::uint64_t total_steps_ = 0;
  std::uint64_t steps_ = 0;
};

inline std::uint64_t total_optimizer_steps(std::size_t examples, int epochs, int batch_size) {
  const std::size_t per_epoch = (examples + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
  return per_epoch * static_cast<std::size_t>(epochs);
}

}  // namespace trims
