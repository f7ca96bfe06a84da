#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trims/bucketing.hpp"
#include "trims/corpus.hpp"
#include "trims/model.hpp"
#include "trims/rng.hpp"
#include "trims/updater.hpp"

namespace trims {

enum class LossWeighting { elbo, unweighted };

inline std::string to_string(LossWeighting w) { return w == LossWeighting::elbo ? "elbo" : "unweighted"; }

inline LossWeighting parse_weighting(const std::string& s) {
  if (s == "elbo") return LossWeighting::elbo;
  if (s == "unweighted") return LossWeighting::unweighted;
  throw UsageError("loss_weighting must be 'elbo' or 'unweighted', got '" + s + "'");
}

// Linear schedule: alpha_t = 1 - t, so a token survives corruption with
// probability alpha_t and is masked with probability t.
struct NoiseSchedule {
  double alpha(double t) const { return 1.0 - t; }
  double alpha_dot(double) const { return -1.0; }
};

// |alpha_dot_t| / (1 - alpha_t), capped at `clip` (also covers t = 0).
inline double elbo_weight(const NoiseSchedule& schedule, double t, double clip) {
  const double denom = 1.0 - schedule.alpha(t);
  if (denom <= 0.0) return clip;
  return std::min(clip, std::abs(schedule.alpha_dot(t)) / denom);
}

struct TrainConfig {
  double p_context = 0.05;
  double p_future = 0.95;
  double trajectory_ratio = 0.10;
  int k = 8;
  Ordering ordering = Ordering::hard_to_easy;
  int epochs = 30;
  int batch_size = 16;
  OptimConfig optim;
  LossWeighting loss_weighting = LossWeighting::elbo;
  double weight_clip = 20.0;
  // Response region length: completion followed by END fill.
  int gen_len = 48;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(0.0 <= p_context && p_context <= p_future && p_future <= 1.0)) {
      throw UsageError("train config: need 0 <= p_context <= p_future <= 1");
    }
    if (!(0.0 <= trajectory_ratio && trajectory_ratio <= 1.0)) {
      throw UsageError("train config: trajectory_ratio must lie in [0, 1]");
    }
    if (k < 1) throw UsageError("train config: k must be at least 1");
    if (epochs < 0) throw UsageError("train config: epochs must be non-negative");
    if (batch_size < 1) throw UsageError("train config: batch_size must be positive");
    if (gen_len < 1) throw UsageError("train config: gen_len must be positive");
    if (weight_clip <= 0.0) throw UsageError("train config: weight_clip must be positive");
  }
};

// Each completion token independently becomes MASK with probability t.
// Only the completion is passed in; prompts are never corrupted.
inline std::vector<int> corrupt_standard(std::span<const int> x0, double t, Rng& rng) {
  std::vector<int> z(x0.begin(), x0.end());
  for (auto& tok : z) {
    if (rng.bernoulli(t)) tok = kMaskId;
  }
  return z;
}

// Trajectory-aware masking: tokens with bucket id > k are future tokens and
// are masked with probability p_future; the rest are context, masked with
// probability p_context. This replaces the standard corruption outcome.
inline std::vector<int> corrupt_trajectory(std::span<const int> x0, std::span<const int> bucket_ids, int k,
                                           double p_context, double p_future, Rng& rng) {
  if (bucket_ids.size() != x0.size()) {
    if (bucket_ids.empty()) throw DataError("corrupt_trajectory: missing bucket_ids");
    throw DataError("corrupt_trajectory: " + std::to_string(bucket_ids.size()) + " bucket ids for " +
                    std::to_string(x0.size()) + " tokens");
  }
  std::vector<int> z(x0.begin(), x0.end());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = bucket_ids[i] > k ? p_future : p_context;
    if (rng.bernoulli(p)) z[i] = kMaskId;
  }
  return z;
}

// Masked-token negative log-likelihood over logits [n x V]. `targets` are the
// clean tokens and `masked[i]` marks positions that were MASK in the input;
// all other rows (prompt, unmasked) contribute nothing.
//   unweighted: mean over masked rows of -log p(target)
//   elbo:       w(t) * sum over masked rows, w = |alpha_dot| / (1 - alpha), capped
// No masked rows gives a loss of exactly 0.
template <class T>
Var<T> mdlm_loss(Var<T> logits, std::span<const int> targets, std::span<const std::uint8_t> masked, double t,
                 const NoiseSchedule& schedule, LossWeighting weighting, double weight_clip) {
  const std::size_t n = targets.size();
  if (masked.size() != n) throw ShapeError("mdlm_loss: mask and target lengths differ");
  const auto count = static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
  const double w = count == 0 ? 0.0
                   : weighting == LossWeighting::unweighted ? 1.0 / static_cast<double>(count)
                                                            : elbo_weight(schedule, t, weight_clip);
  std::vector<T> weights(n, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    if (masked[i]) weights[i] = static_cast<T>(w);
  }
  return cross_entropy<T>(logits, targets, weights);
}

enum class CorruptionMode { standard, trajectory };

struct TrainRecord {
  std::uint64_t step = 0;  // optimizer step this draw contributed to
  std::uint64_t epoch = 0;
  std::uint64_t example = 0;
  CorruptionMode mode = CorruptionMode::standard;
  double t = 0.0;
  int k = 0;
  std::size_t masked = 0;
  double loss = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::size_t skipped_updates = 0;  // optimizer steps dropped for non-finite gradients

  std::size_t trajectory_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const TrainRecord& r) {
      return r.mode == CorruptionMode::trajectory;
    }));
  }
};

inline nlohmann::json to_json(const TrainRecord& r) {
  return {{"step", r.step},
          {"epoch", r.epoch},
          {"example", r.example},
          {"mode", r.mode == CorruptionMode::trajectory ? "trajectory" : "standard"},
          {"t", r.t},
          {"k", r.k},
          {"masked", r.masked},
          {"loss", r.loss}};
}

inline void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  for (const auto& r : log.records) os << to_json(r).dump() << '\n';
}

// Clean response region: completion, then END up to gen_len.
inline std::vector<int> response_targets(const Example& ex, int gen_len) {
  if (ex.completion.size() > static_cast<std::size_t>(gen_len)) {
    throw DataError("completion of length " + std::to_string(ex.completion.size()) + " exceeds gen_len " +
                    std::to_string(gen_len));
  }
  std::vector<int> r = ex.completion;
  r.resize(static_cast<std::size_t>(gen_len), kEndId);
  return r;
}

// Bucket ids over the whole response region. END fill positions are treated
// as zero-difficulty tokens under the corpus table.
inline std::vector<int> response_buckets(const ScoredExample& s, const BucketTable& table, std::size_t example_index,
                                         int gen_len) {
  if (!s.bucket_ids) throw DataError("example " + std::to_string(example_index) + ": missing bucket_ids");
  std::vector<int> b = *s.bucket_ids;
  for (std::size_t i = b.size(); i < static_cast<std::size_t>(gen_len); ++i) {
    b.push_back(bucket_of(0.0, table, example_index, i));
  }
  return b;
}

// One corrupted draw of an example: the sampled mode, t, k and noisy response.
struct Draw {
  CorruptionMode mode = CorruptionMode::standard;
  double t = 0.0;
  int k = 0;
  std::vector<int> noisy;  // response region after corruption
};

// Randomness is keyed by (seed, epoch, example index), so a draw does not
// depend on iteration order or on any other example.
inline Draw sample_draw(const std::vector<int>& clean, const std::vector<int>* buckets, const TrainConfig& cfg,
                        std::uint64_t epoch, std::uint64_t example_index) {
  Rng rng(hash_key({cfg.seed, 0xd1ffULL, epoch, example_index}));
  Draw d;
  const bool trajectory = rng.bernoulli(cfg.trajectory_ratio);
  d.t = rng.uniform();
  d.k = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.k)));
  if (trajectory) {
    if (!buckets) throw DataError("example " + std::to_string(example_index) + ": missing bucket_ids");
    d.mode = CorruptionMode::trajectory;
    d.noisy = corrupt_trajectory(clean, *buckets, d.k, cfg.p_context, cfg.p_future, rng);
  } else {
    d.noisy = corrupt_standard(clean, d.t, rng);
  }
  return d;
}

// Input tokens, targets and mask indicator for the full prompt + response sequence.
struct StudentBatchRow {
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<std::uint8_t> masked;
};

inline StudentBatchRow student_row(const Example& ex, const std::vector<int>& clean, const std::vector<int>& noisy) {
  StudentBatchRow row;
  row.tokens = ex.prompt;
  row.tokens.insert(row.tokens.end(), noisy.begin(), noisy.end());
  row.targets.assign(ex.prompt.size(), kPadId);
  row.targets.insert(row.targets.end(), clean.begin(), clean.end());
  row.masked.assign(ex.prompt.size(), 0);
  for (int tok : noisy) row.masked.push_back(tok == kMaskId ? 1 : 0);
  return row;
}

// Mixed standard / trajectory-aware masked diffusion training. Each draw
// independently uses trajectory masking with probability trajectory_ratio.
template <class T = float>
Checkpoint<T> train(const Dataset& data, Checkpoint<T> student, const TrainConfig& cfg, TrainLog* log = nullptr) {
  cfg.validate();
  if (data.examples.empty()) throw DataError("train: dataset is empty");
  if (student.config.attention_mode != AttentionMode::bidirectional) {
    throw UsageError("train: student must use bidirectional attention");
  }
  if (cfg.trajectory_ratio > 0.0) {
    if (!data.table) throw DataError("train: trajectory_ratio > 0 needs a bucketed dataset (run `bucket` first)");
    if (data.table->k != cfg.k) {
      throw UsageError("train: k = " + std::to_string(cfg.k) + " but the dataset was bucketed with K = " +
                       std::to_string(data.table->k));
    }
  }
  student.role = "student";

  const std::size_t n = data.examples.size();
  std::vector<std::vector<int>> clean(n);
  std::vector<std::optional<std::vector<int>>> buckets(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Example& ex = data.examples[i].example;
    if (ex.prompt.size() + static_cast<std::size_t>(cfg.gen_len) > static_cast<std::size_t>(student.config.max_seq_len)) {
      throw DataError("example " + std::to_string(i) + ": prompt + gen_len exceeds max_seq_len");
    }
    clean[i] = response_targets(ex, cfg.gen_len);
    if (cfg.trajectory_ratio > 0.0) buckets[i] = response_buckets(data.examples[i], *data.table, i, cfg.gen_len);
  }

  const std::uint64_t total = total_optimizer_steps(n, cfg.epochs, cfg.batch_size);
  ParamUpdater<T> updater(student, cfg.optim, total);
  const NoiseSchedule schedule;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    Rng order_rng(hash_key({cfg.seed, 0x0deaULL, e}));
    const auto order = permutation(n, order_rng);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t idx = order[b];
        const Example& ex = data.examples[idx].example;
        Draw d = sample_draw(clean[idx], buckets[idx] ? &*buckets[idx] : nullptr, cfg, e, idx);
        StudentBatchRow row = student_row(ex, clean[idx], d.noisy);
        Graph<T> g;
        auto logits = forward(g, student.config, student.params, &updater.grads(), std::span<const int>(row.tokens));
        auto loss = mdlm_loss<T>(logits, row.targets, row.masked, d.t, schedule, cfg.loss_weighting, cfg.weight_clip);
        const double lv = static_cast<double>(loss.value()[0]);
        const auto masked = static_cast<std::size_t>(std::count(row.masked.begin(), row.masked.end(), std::uint8_t{1}));
        if (!std::isfinite(lv)) {
          throw NumericalError("train: non-finite loss at step " + std::to_string(step) + " (epoch " +
                               std::to_string(epoch) + ", example " + std::to_string(idx) + ", mode " +
                               (d.mode == CorruptionMode::trajectory ? "trajectory" : "standard") +
                               ", t=" + std::to_string(d.t) + ", k=" + std::to_string(d.k) + ")");
        }
        g.backward(loss);
        if (log) log->records.push_back(TrainRecord{step, e, idx, d.mode, d.t, d.k, masked, lv});
      }
      const auto report = updater.step(stop - start);
      if (!report.applied && log) ++log->skipped_updates;
      ++step;
    }
  }
  return student;
}

}  // namespace trims
