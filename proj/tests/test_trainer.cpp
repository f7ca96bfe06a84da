#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"
#include "trims/trainer.hpp"

namespace trims {
namespace {

using testing::within_4sigma;

std::vector<int> clean_seq(std::size_t n) {
  std::vector<int> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = kFirstCharId + static_cast<int>(i % 20);
  return x;
}

TEST(ElboWeight, InverseTimeAndClip) {
  const NoiseSchedule s;
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double t = 0.05 + 0.95 * rng.uniform();
    EXPECT_DOUBLE_EQ(elbo_weight(s, t, 20.0), 1.0 / t);
  }
  EXPECT_EQ(elbo_weight(s, 0.01, 20.0), 20.0);
  EXPECT_EQ(elbo_weight(s, 0.0, 20.0), 20.0);
}

TEST(CorruptStandard, Endpoints) {
  Rng rng(1);
  const auto x = clean_seq(40);
  EXPECT_EQ(corrupt_standard(x, 0.0, rng), x);
  for (int v : corrupt_standard(x, 1.0, rng)) EXPECT_EQ(v, kMaskId);
}

TEST(CorruptStandard, MaskRateBands) {
  const auto x = clean_seq(64);
  for (double t : {0.1, 0.5, 0.9}) {
    Rng rng(hash_key({7, static_cast<std::uint64_t>(t * 100)}));
    std::size_t masked = 0;
    const std::size_t trials = 10000;
    for (std::size_t i = 0; i < trials; ++i) {
      const auto z = corrupt_standard(x, t, rng);
      masked += static_cast<std::size_t>(std::count(z.begin(), z.end(), kMaskId));
    }
    EXPECT_TRUE(within_4sigma(masked, trials * x.size(), t)) << "t=" << t;
    if (t == 0.5) {
      const double rate = static_cast<double>(masked) / static_cast<double>(trials * x.size());
      EXPECT_GE(rate, 0.48);
      EXPECT_LE(rate, 0.52);
    }
  }
}

TEST(CorruptTrajectory, GroupRates) {
  const auto x = clean_seq(4);
  const std::vector<int> b{0, 1, 2, 3};
  Rng rng(11);
  std::size_t ctx = 0, fut = 0;
  const std::size_t trials = 10000;
  for (std::size_t i = 0; i < trials; ++i) {
    const auto z = corrupt_trajectory(x, b, 1, 0.05, 0.95, rng);
    ctx += (z[0] == kMaskId) + (z[1] == kMaskId);
    fut += (z[2] == kMaskId) + (z[3] == kMaskId);
    EXPECT_TRUE(z[0] == x[0] || z[0] == kMaskId);
  }
  EXPECT_TRUE(within_4sigma(ctx, 2 * trials, 0.05)) << ctx;
  EXPECT_TRUE(within_4sigma(fut, 2 * trials, 0.95)) << fut;
}

TEST(CorruptTrajectory, TopThresholdIsAllContext) {
  const auto x = clean_seq(50);
  std::vector<int> b(50);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<int>(i % 8);
  Rng rng(2);
  std::size_t masked = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto z = corrupt_trajectory(x, b, 7, 0.05, 0.95, rng);
    masked += static_cast<std::size_t>(std::count(z.begin(), z.end(), kMaskId));
  }
  EXPECT_TRUE(within_4sigma(masked, 2000 * 50, 0.05));
}

TEST(CorruptTrajectory, DegenerateProbabilitiesAreExact) {
  const auto x = clean_seq(30);
  std::vector<int> b(30);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<int>((i * 5) % 8);
  Rng rng(2);
  for (int k = 0; k < 8; ++k) {
    const auto z = corrupt_trajectory(x, b, k, 0.0, 1.0, rng);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(z[i] == kMaskId, b[i] > k);
  }
}

TEST(CorruptTrajectory, MissingBucketsRejected) {
  Rng rng(0);
  const auto x = clean_seq(4);
  EXPECT_THROW(corrupt_trajectory(x, {}, 1, 0.05, 0.95, rng), DataError);
  const std::vector<int> short_b{0, 1};
  EXPECT_THROW(corrupt_trajectory(x, short_b, 1, 0.05, 0.95, rng), DataError);
}

// Logits with one huge entry per row: probability 1 on `hot`.
Tensor<double> peaked_logits(const std::vector<int>& hot) {
  Tensor<double> t({hot.size(), static_cast<std::size_t>(kVocabSize)});
  for (std::size_t r = 0; r < hot.size(); ++r) t.at(r, static_cast<std::size_t>(hot[r])) = 1e3;
  return t;
}

TEST(MdlmLoss, PerfectPredictionIsZero) {
  Graph<double> g;
  const std::vector<int> targets{5, 6, 7};
  const std::vector<std::uint8_t> masked{0, 1, 0};
  auto l = mdlm_loss<double>(g.constant(peaked_logits(targets)), targets, masked, 0.3, {}, LossWeighting::elbo, 20);
  EXPECT_NEAR(l.value()[0], 0.0, 1e-12);
}

TEST(MdlmLoss, UniformUnweightedIsLogV) {
  Graph<double> g;
  const std::vector<int> targets{5, 6, 7, 8};
  const std::vector<std::uint8_t> masked{1, 1, 0, 1};
  Tensor<double> zeros({4, static_cast<std::size_t>(kVocabSize)});
  auto l = mdlm_loss<double>(g.constant(zeros), targets, masked, 0.3, {}, LossWeighting::unweighted, 20);
  EXPECT_NEAR(l.value()[0], std::log(static_cast<double>(kVocabSize)), 1e-12);
}

TEST(MdlmLoss, ElboIsInverseTimeTimesSum) {
  Rng rng(4);
  Tensor<double> logits({6, static_cast<std::size_t>(kVocabSize)});
  for (auto& v : logits.data()) v = rng.normal();
  const std::vector<int> targets{3, 4, 5, 6, 7, 8};
  const std::vector<std::uint8_t> masked{1, 0, 1, 1, 0, 1};
  // Direct arithmetic oracle.
  double sum = 0;
  for (std::size_t r = 0; r < 6; ++r) {
    if (!masked[r]) continue;
    double z = 0;
    for (std::size_t v = 0; v < logits.cols(); ++v) z += std::exp(logits.at(r, v));
    sum += std::log(z) - logits.at(r, static_cast<std::size_t>(targets[r]));
  }
  for (double t : {0.5, 0.2, 0.9}) {
    Graph<double> g;
    auto l = mdlm_loss<double>(g.constant(logits), targets, masked, t, {}, LossWeighting::elbo, 20);
    EXPECT_NEAR(l.value()[0], sum / t, 1e-10);
  }
  Graph<double> g;
  auto u = mdlm_loss<double>(g.constant(logits), targets, masked, 0.5, {}, LossWeighting::unweighted, 20);
  EXPECT_NEAR(u.value()[0], sum / 4, 1e-12);
  auto at_zero = mdlm_loss<double>(g.constant(logits), targets, masked, 0.0, {}, LossWeighting::elbo, 20);
  EXPECT_NEAR(at_zero.value()[0], 20 * sum, 1e-9);
}

TEST(MdlmLoss, NoMaskedIsZeroAndUnmaskedRowsIgnored) {
  Rng rng(4);
  Tensor<double> logits({3, static_cast<std::size_t>(kVocabSize)});
  for (auto& v : logits.data()) v = rng.normal();
  const std::vector<int> targets{3, 4, 5};
  Graph<double> g;
  EXPECT_EQ(mdlm_loss<double>(g.constant(logits), targets, std::vector<std::uint8_t>{0, 0, 0}, 0.4, {},
                              LossWeighting::elbo, 20)
                .value()[0],
            0.0);
  const std::vector<std::uint8_t> masked{0, 1, 0};
  auto changed = logits;
  for (std::size_t v = 0; v < changed.cols(); ++v) changed.at(0, v) += 5.0 * rng.normal();
  const double a = mdlm_loss<double>(g.constant(logits), targets, masked, 0.4, {}, LossWeighting::elbo, 20).value()[0];
  const double b = mdlm_loss<double>(g.constant(changed), targets, masked, 0.4, {}, LossWeighting::elbo, 20).value()[0];
  EXPECT_EQ(a, b);
}

TEST(StudentLoss, GradCheckAllArms) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (auto w : {LossWeighting::elbo, LossWeighting::unweighted}) {
      for (auto m : {CorruptionMode::standard, CorruptionMode::trajectory}) {
        const auto r = testing::student_loss_grad_check(seed, w, m);
        EXPECT_TRUE(r.passed(1e-4)) << "seed " << seed << " " << to_string(w) << " mode " << static_cast<int>(m)
                                    << " err " << r.max_rel_error << " param " << r.worst_param;
      }
    }
  }
}

TEST(SampleDraw, TrajectoryFractionBand) {
  TrainConfig cfg;
  cfg.trajectory_ratio = 0.1;
  const auto clean = clean_seq(10);
  const std::vector<int> b(10, 3);
  std::size_t traj = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    traj += sample_draw(clean, &b, cfg, i / 500, i % 500).mode == CorruptionMode::trajectory;
  }
  EXPECT_GE(traj, 800u);
  EXPECT_LE(traj, 1200u);
}

TEST(SampleDraw, KeyedByEpochAndIndex) {
  TrainConfig cfg;
  cfg.trajectory_ratio = 0.5;
  const auto clean = clean_seq(16);
  const std::vector<int> b(16, 5);
  const auto a = sample_draw(clean, &b, cfg, 3, 17);
  sample_draw(clean, &b, cfg, 0, 0);
  const auto c = sample_draw(clean, &b, cfg, 3, 17);
  EXPECT_EQ(a.noisy, c.noisy);
  EXPECT_EQ(a.t, c.t);
  EXPECT_EQ(a.k, c.k);
  EXPECT_NE(sample_draw(clean, &b, cfg, 3, 18).t, a.t);
}

ModelConfig student_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.max_seq_len = 40;
  return c;
}

Dataset small_bucketed(int k) {
  std::vector<ScoredExample> data;
  Rng rng(5);
  for (const auto& ex : gen_corpus(TaskKind::copy_reverse, 12, 1)) {
    std::vector<double> s(ex.completion.size());
    for (auto& v : s) v = rng.uniform();
    data.push_back({ex, s, std::nullopt});
  }
  return bucket_corpus(data, k, Ordering::hard_to_easy, 0);
}

TrainConfig small_train(double rho, int k) {
  TrainConfig cfg;
  cfg.trajectory_ratio = rho;
  cfg.k = k;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.gen_len = 40 - 25;
  return cfg;
}

Dataset short_corpus(int k) {
  auto d = small_bucketed(k);
  // copy_reverse prompts are long; keep the sequences inside max_seq_len.
  for (auto& s : d.examples) {
    s.example = make_copy_reverse("abcdefghab");
    s.scores->resize(s.example.completion.size(), 0.5);
    s.bucket_ids->resize(s.example.completion.size(), 0);
  }
  return d;
}

TEST(Train, RhoZeroHasNoTrajectoryDraws) {
  auto d = short_corpus(8);
  d.table.reset();
  TrainLog log;
  train<float>(d, init_model<float>(student_config(), 0), small_train(0.0, 8), &log);
  EXPECT_EQ(log.records.size(), 24u);
  EXPECT_EQ(log.trajectory_count(), 0u);
}

TEST(Train, RhoOneKOneIsAllTrajectoryAtZero) {
  const auto d = short_corpus(1);
  TrainLog log;
  auto cfg = small_train(1.0, 1);
  train<float>(d, init_model<float>(student_config(), 0), cfg, &log);
  EXPECT_EQ(log.trajectory_count(), log.records.size());
  for (const auto& r : log.records) EXPECT_EQ(r.k, 0);
}

TEST(Train, LogMatchesKeyedDraws) {
  const auto d = short_corpus(8);
  const auto cfg = small_train(0.5, 8);
  TrainLog log;
  train<float>(d, init_model<float>(student_config(), 0), cfg, &log);
  for (const auto& r : log.records) {
    const auto clean = response_targets(d.examples[r.example].example, cfg.gen_len);
    const auto b = response_buckets(d.examples[r.example], *d.table, r.example, cfg.gen_len);
    const auto draw = sample_draw(clean, &b, cfg, r.epoch, r.example);
    EXPECT_EQ(draw.mode, r.mode);
    EXPECT_EQ(draw.t, r.t);
    EXPECT_EQ(draw.k, r.k);
    EXPECT_EQ(static_cast<std::size_t>(std::count(draw.noisy.begin(), draw.noisy.end(), kMaskId)), r.masked);
  }
}

TEST(Train, Deterministic) {
  const auto d = short_corpus(8);
  const auto a = train<float>(d, init_model<float>(student_config(), 0), small_train(0.3, 8));
  const auto b = train<float>(d, init_model<float>(student_config(), 0), small_train(0.3, 8));
  EXPECT_TRUE(a.params == b.params);
  EXPECT_EQ(a.role, "student");
}

TEST(Train, Preconditions) {
  auto d = short_corpus(8);
  auto cfg = small_train(0.1, 4);
  EXPECT_THROW(train<float>(d, init_model<float>(student_config(), 0), cfg), UsageError);  // K mismatch
  cfg.k = 8;
  auto causal = student_config();
  causal.attention_mode = AttentionMode::causal;
  EXPECT_THROW(train<float>(d, init_model<float>(causal, 0), cfg), UsageError);
  d.table.reset();
  EXPECT_THROW(train<float>(d, init_model<float>(student_config(), 0), cfg), DataError);
}

TEST(Train, NonFiniteLossAborts) {
  const auto d = short_corpus(8);
  auto ck = init_model<float>(student_config(), 0);
  ck.params.at("tok_emb").fill(std::nanf(""));
  try {
    train<float>(d, ck, small_train(0.1, 8));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Train, LossFallsOnTinyCorpus) {
  const auto d = short_corpus(8);
  auto cfg = small_train(0.1, 8);
  cfg.epochs = 30;
  cfg.optim.lr = 3e-3;
  TrainLog log;
  train<float>(d, init_model<float>(student_config(), 0), cfg, &log);
  // Undo the ELBO weight: per-masked-token NLL.
  auto mean_unweighted = [&](std::size_t from, std::size_t to) {
    double s = 0;
    for (std::size_t i = from; i < to; ++i) {
      const auto& r = log.records[i];
      s += r.loss * std::max(r.t, 1.0 / 20) / static_cast<double>(std::max<std::size_t>(r.masked, 1));
    }
    return s / static_cast<double>(to - from);
  };
  const std::size_t n = log.records.size();
  EXPECT_LT(mean_unweighted(n - 48, n), 0.5 * mean_unweighted(0, 48));
}

}  // namespace
}  // namespace trims
