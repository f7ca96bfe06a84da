#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <cmath>
#include <string>
#include <vector>

#include "trims/bucketing.hpp"
#include "trims/decoder.hpp"
#include "trims/grad_check.hpp"
#include "trims/trainer.hpp"

namespace trims::testing {

// Relative error of analytic vs central-difference gradients of the full
// student objective (prompt + corrupted response -> masked loss), float64.
inline GradCheckReport student_loss_grad_check(std::uint64_t seed, LossWeighting weighting, CorruptionMode mode) {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_layers = 2;
  mc.max_seq_len = 24;
  mc.attention_mode = AttentionMode::bidirectional;
  auto ck = init_model<double>(mc, seed);
  Rng rng(hash_key({seed, 0x9c}));
  for (auto& t : ck.params.tensors())
    for (auto& v : t.data()) v += 0.2 * rng.normal();

  const Example ex = make_copy_reverse(std::string("abcdefgh").substr(0, 4 + seed % 4));
  TrainConfig cfg;
  cfg.gen_len = 12;
  cfg.k = 4;
  cfg.seed = seed;
  cfg.loss_weighting = weighting;
  cfg.trajectory_ratio = mode == CorruptionMode::trajectory ? 1.0 : 0.0;
  const auto clean = response_targets(ex, cfg.gen_len);
  std::vector<int> buckets(clean.size());
  for (auto& b : buckets) b = static_cast<int>(rng.below(4));

  // Redraw until the sample masks something, so the loss is non-trivial.
  Draw d;
  for (std::uint64_t e = 0;; ++e) {
    d = sample_draw(clean, &buckets, cfg, e, 0);
    if (std::count(d.noisy.begin(), d.noisy.end(), kMaskId) > 0) break;
  }
  const auto row = student_row(ex, clean, d.noisy);
  const NoiseSchedule schedule;
  return grad_check<double>(
      [&](Graph<double>& g, std::span<const Var<double>> v) {
        auto logits = forward_vars(g, mc, v, std::span<const int>(row.tokens));
        return mdlm_loss<double>(logits, row.targets, row.masked, d.t, schedule, weighting, cfg.weight_clip);
      },
      ck.params.tensors());
}

// Binomial 4-sigma band check.
inline bool within_4sigma(std::size_t hits, std::size_t trials, double p) {
  const double n = static_cast<double>(trials);
  const double sd = std::sqrt(n * p * (1.0 - p));
  return std::abs(static_cast<double>(hits) - n * p) <= 4.0 * sd + 1e-12;
}

// Empty string when the trace satisfies every decoder contract, else the
// first violation found.
inline std::string trace_violation(const DecodeTrace& tr, const DecodeConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.max_new_tokens);
  if (tr.final_tokens.size() != n) return "final sequence length differs from max_new_tokens";
  if (tr.steps.empty()) return "no steps";
  if (tr.steps_used() > cfg.max_steps) return "more steps than max_steps";
  const auto bound = (n + static_cast<std::size_t>(cfg.min_commit) - 1) / static_cast<std::size_t>(cfg.min_commit);
  if (static_cast<std::size_t>(tr.steps_used()) > bound) return "more steps than ceil(N / min_commit)";
  std::vector<bool> seen(n, false);
  std::size_t remaining = n;
  for (std::size_t s = 0; s < tr.steps.size(); ++s) {
    const auto& st = tr.steps[s];
    if (st.step != static_cast<int>(s)) return "step index out of sequence";
    if (st.forced && s + 1 != tr.steps.size()) return "forced step is not the last";
    const auto need = std::min<std::size_t>(static_cast<std::size_t>(cfg.min_commit), remaining);
    if (st.positions.size() < need) return "step " + std::to_string(s) + " commits fewer than min_commit";
    for (std::size_t i = 0; i < st.positions.size(); ++i) {
      const int p = st.positions[i];
      if (p < 0 || static_cast<std::size_t>(p) >= n) return "position out of range";
      if (seen[static_cast<std::size_t>(p)]) return "position " + std::to_string(p) + " committed twice";
      seen[static_cast<std::size_t>(p)] = true;
      if (tr.final_tokens[static_cast<std::size_t>(p)] != st.tokens[i]) {
        return "committed token at position " + std::to_string(p) + " was revised";
      }
      if (st.tokens[i] == kMaskId || st.tokens[i] == kPadId) return "committed a MASK or PAD";
    }
    remaining -= st.positions.size();
  }
  for (std::size_t p = 0; p < n; ++p) {
    const bool fill = p >= static_cast<std::size_t>(tr.auto_fill_begin);
    if (!seen[p] && !fill) return "position " + std::to_string(p) + " never committed";
    if (fill && !seen[p] && tr.final_tokens[p] != kEndId) return "auto-filled position is not END";
  }
  const double expected = static_cast<double>(tr.generated_tokens()) / static_cast<double>(tr.steps_used());
  if (tps(tr) != expected) return "tps differs from tokens / steps";
  if (tps(tr) < 1.0) return "tps below 1";
  return {};
}

}  // namespace trims::testing
