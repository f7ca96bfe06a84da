#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "trims/corpus.hpp"
#include "trims/model.hpp"
#include "trims/parallel.hpp"
#include "trims/rng.hpp"
#include "trims/updater.hpp"

namespace trims {

enum class DifficultyMetric { nll, entropy };

inline std::string to_string(DifficultyMetric m) { return m == DifficultyMetric::nll ? "nll" : "entropy"; }

inline DifficultyMetric parse_metric(const std::string& s) {
  if (s == "nll") return DifficultyMetric::nll;
  if (s == "entropy") return DifficultyMetric::entropy;
  throw UsageError("difficulty metric must be 'nll' or 'entropy', got '" + s + "'");
}

struct TeacherConfig {
  ModelConfig model;  // attention_mode is forced to causal
  int epochs = 8;
  int batch_size = 16;
  OptimConfig optim;
  // Mean loss over a fixed probe subset is recorded every `eval_every` steps.
  int eval_every = 20;
  std::size_t probe_size = 64;
};

struct TeacherLog {
  std::vector<std::uint64_t> eval_steps;
  std::vector<double> eval_losses;
};

// Next-token inputs and weights for one example: position i predicts
// tokens[i + 1], and only completion targets carry weight (1 / |completion|).
template <class T>
struct TeacherForcing {
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<T> weights;
};

template <class T>
TeacherForcing<T> teacher_forcing_rows(const Example& ex) {
  if (ex.prompt.empty()) throw DataError("teacher scoring needs a non-empty prompt");
  TeacherForcing<T> tf;
  tf.tokens = ex.prompt;
  tf.tokens.insert(tf.tokens.end(), ex.completion.begin(), ex.completion.end());
  const std::size_t n = tf.tokens.size();
  const std::size_t p = ex.prompt.size();
  tf.targets.assign(n, kPadId);
  tf.weights.assign(n, T(0));
  const T w = T(1) / static_cast<T>(ex.completion.size());
  for (std::size_t i = p - 1; i + 1 < n; ++i) {
    tf.targets[i] = tf.tokens[i + 1];
    tf.weights[i] = w;
  }
  return tf;
}

template <class T>
double teacher_example_loss(const Checkpoint<T>& ck, const Example& ex) {
  auto tf = teacher_forcing_rows<T>(ex);
  Graph<T> g;
  auto logits = forward(g, ck.config, ck.params, static_cast<NamedTensors<T>*>(nullptr),
                        std::span<const int>(tf.tokens));
  return static_cast<double>(cross_entropy<T>(logits, tf.targets, tf.weights).value()[0]);
}

// Causal next-token training with loss on completion tokens only.
template <class T = float>
Checkpoint<T> train_teacher(const std::vector<Example>& data, TeacherConfig config, std::uint64_t seed,
                            TeacherLog* log = nullptr) {
  if (data.empty()) throw DataError("train_teacher: dataset is empty");
  config.model.attention_mode = AttentionMode::causal;
  Checkpoint<T> ck = init_model<T>(config.model, seed);
  ck.role = "teacher";
  const std::uint64_t total = total_optimizer_steps(data.size(), config.epochs, config.batch_size);
  ParamUpdater<T> updater(ck, config.optim, total);
  const std::size_t probe = std::min(config.probe_size, data.size());

  auto probe_loss = [&] {
    double s = 0;
    for (std::size_t i = 0; i < probe; ++i) s += teacher_example_loss(ck, data[i]);
    return s / static_cast<double>(probe);
  };

  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng order_rng(hash_key({seed, 0x7e4c11e7ULL, static_cast<std::uint64_t>(epoch)}));
    const auto order = permutation(data.size(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      double batch_loss = 0;
      for (std::size_t b = start; b < stop; ++b) {
        auto tf = teacher_forcing_rows<T>(data[order[b]]);
        Graph<T> g;
        auto logits = forward(g, ck.config, ck.params, &updater.grads(), std::span<const int>(tf.tokens));
        auto loss = cross_entropy<T>(logits, tf.targets, tf.weights);
        batch_loss += static_cast<double>(loss.value()[0]);
        g.backward(loss);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("train_teacher: non-finite loss at step " + std::to_string(step));
      }
      updater.step(stop - start);
      ++step;
      if (log && config.eval_every > 0 && step % static_cast<std::uint64_t>(config.eval_every) == 0) {
        log->eval_steps.push_back(step);
        log->eval_losses.push_back(probe_loss());
      }
    }
  }
  return ck;
}

// Per-completion-token difficulty from one teacher-forcing forward pass.
// nll: -log p(y_i | x, y_<i). entropy: entropy of the predictive distribution
// at that position. Natural log.
template <class T>
std::vector<double> score_tokens(const Model<T>& teacher, const Example& ex, DifficultyMetric metric) {
  if (teacher.config().attention_mode != AttentionMode::causal) {
    throw UsageError("score_tokens: teacher must use causal attention");
  }
  if (ex.prompt.empty()) throw DataError("score_tokens: example has an empty prompt");
  if (ex.length() > static_cast<std::size_t>(teacher.config().max_seq_len)) {
    throw DataError("score_tokens: sequence length " + std::to_string(ex.length()) + " exceeds max_seq_len " +
                    std::to_string(teacher.config().max_seq_len));
  }
  std::vector<int> tokens = ex.prompt;
  tokens.insert(tokens.end(), ex.completion.begin(), ex.completion.end());
  const Tensor<T> logits = teacher.logits(std::span<const int>(tokens));
  const std::size_t p = ex.prompt.size();
  std::vector<double> scores(ex.completion.size());
  for (std::size_t i = 0; i < ex.completion.size(); ++i) {
    auto row = logits.row(p - 1 + i);
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0;
    for (T v : row) z += std::exp(static_cast<double>(v) - mx);
    const double log_z = mx + std::log(z);
    if (metric == DifficultyMetric::nll) {
      scores[i] = log_z - static_cast<double>(row[static_cast<std::size_t>(ex.completion[i])]);
    } else {
      double h = 0;
      for (T v : row) {
        const double logp = static_cast<double>(v) - log_z;
        h -= std::exp(logp) * logp;
      }
      scores[i] = h;
    }
    // Rounding can leave -0 or a tiny negative; scores are non-negative by definition.
    scores[i] = std::max(0.0, scores[i]);
  }
  return scores;
}

// Attaches scores to every example (prompt tokens are never scored). Existing
// bucket ids are dropped since they no longer match the new scores.
template <class T>
std::vector<ScoredExample> score_corpus(const Model<T>& teacher, const std::vector<ScoredExample>& data,
                                        DifficultyMetric metric) {
  std::vector<ScoredExample> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    try {
      out[i].example = data[i].example;
      out[i].scores = score_tokens(teacher, data[i].example, metric);
    } catch (const DataError& e) {
      throw DataError("example " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace trims
