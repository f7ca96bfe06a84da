#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "trims/analysis.hpp"

namespace trims {
namespace {

ModelConfig teacher_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.max_seq_len = 40;
  c.attention_mode = AttentionMode::causal;
  return c;
}

const Model<double>& teacher() {
  static const Model<double> m(init_model<double>(teacher_config(), 8));
  return m;
}

// A trace over `final_tokens` whose commit order is a seeded shuffle split
// into random-size steps.
DecodeTrace synthetic_trace(std::uint64_t seed, std::vector<int> final_tokens) {
  Rng rng(seed);
  DecodeTrace t;
  t.prompt = tokenize("abc=");
  t.final_tokens = final_tokens;
  t.config.max_new_tokens = static_cast<int>(final_tokens.size());
  t.auto_fill_begin = static_cast<int>(final_tokens.size());
  auto order = permutation(final_tokens.size(), rng);
  std::size_t i = 0;
  while (i < order.size()) {
    const std::size_t take = std::min(order.size() - i, 1 + rng.below(4));
    std::vector<std::size_t> pos(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(i + take));
    std::sort(pos.begin(), pos.end());
    StepRecord s;
    s.step = t.steps_used();
    for (auto p : pos) {
      s.positions.push_back(static_cast<int>(p));
      s.tokens.push_back(final_tokens[p]);
      s.confidences.push_back(0.5);
    }
    t.steps.push_back(s);
    i += take;
  }
  return t;
}

std::vector<int> random_letters(Rng& rng, std::size_t n) {
  std::vector<int> v(n);
  for (auto& x : v) x = tokenize("a")[0] + static_cast<int>(rng.below(8));
  return v;
}

// Independent per-prefix recomputation grouped by step.
std::vector<double> brute_force_series(const DecodeTrace& t) {
  const std::size_t len = scored_length(t.final_tokens);
  std::vector<double> nll(len);
  for (std::size_t i = 0; i < len; ++i) {
    std::vector<int> prefix = t.prompt;
    prefix.insert(prefix.end(), t.final_tokens.begin(), t.final_tokens.begin() + static_cast<long>(i));
    const auto logits = forward_logits(teacher().checkpoint(), std::span<const int>(prefix));
    const auto row = logits.row(prefix.size() - 1);
    double mx = -1e300, z = 0;
    for (double v : row) mx = std::max(mx, v);
    for (double v : row) z += std::exp(v - mx);
    nll[i] = mx + std::log(z) - row[static_cast<std::size_t>(t.final_tokens[i])];
  }
  std::vector<double> out;
  for (const auto& s : t.steps) {
    double sum = 0;
    int n = 0;
    for (int p : s.positions) {
      if (static_cast<std::size_t>(p) < len) {
        sum += nll[static_cast<std::size_t>(p)];
        ++n;
      }
    }
    out.push_back(n ? sum / n : 0.0);
  }
  return out;
}

TEST(StepwiseNll, MatchesBruteForce) {
  Rng rng(2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto fin = random_letters(rng, 16);
    if (seed % 2) std::fill(fin.begin() + 11, fin.end(), kEndId);
    const auto t = synthetic_trace(seed, fin);
    const auto got = stepwise_nll(teacher(), t);
    const auto want = brute_force_series(t);
    ASSERT_EQ(got.mean_nll.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.mean_nll[i], want[i], 1e-9);
  }
}

TEST(StepwiseNll, RegroupingIdentity) {
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto fin = random_letters(rng, 20);
    if (seed % 3 == 0) std::fill(fin.begin() + static_cast<long>(5 + seed % 10), fin.end(), kEndId);
    const auto s = stepwise_nll(teacher(), synthetic_trace(seed, fin));
    EXPECT_NEAR(s.weighted_mean(), s.sequence_mean, 1e-6);
    EXPECT_EQ(s.scored_tokens, scored_length(fin));
  }
}

TEST(StepwiseNll, SingleStepEqualsSequenceMean) {
  Rng rng(4);
  const auto fin = random_letters(rng, 12);
  DecodeTrace t = synthetic_trace(0, fin);
  StepRecord all;
  for (std::size_t i = 0; i < fin.size(); ++i) {
    all.positions.push_back(static_cast<int>(i));
    all.tokens.push_back(fin[i]);
    all.confidences.push_back(1.0);
  }
  t.steps = {all};
  const auto s = stepwise_nll(teacher(), t);
  ASSERT_EQ(s.steps(), 1u);
  EXPECT_DOUBLE_EQ(s.mean_nll[0], s.sequence_mean);
}

TEST(StepwiseNll, PerfectTeacherIsZero) {
  auto ck = init_model<double>(teacher_config(), 1);
  auto& emb = ck.params.at("tok_emb");
  emb.fill(0.0);
  const int c = tokenize("a")[0];
  emb.at(static_cast<std::size_t>(c), 0) = 1.0;
  ck.params.at("ln_f.gamma").fill(0.0);
  ck.params.at("ln_f.beta").fill(0.0);
  ck.params.at("ln_f.beta").data()[0] = 1000.0;
  const Model<double> perfect(ck);
  const auto s = stepwise_nll(perfect, synthetic_trace(5, std::vector<int>(10, c)));
  for (double v : s.mean_nll) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(StepwiseNll, EndOnlyStepsCountNothing) {
  std::vector<int> fin(6, kEndId);
  const auto s = stepwise_nll(teacher(), synthetic_trace(1, fin));
  EXPECT_EQ(s.scored_tokens, 0u);
  for (auto n : s.n_tokens) EXPECT_EQ(n, 0u);
}

TEST(MiddleHalf, WindowBounds) {
  StepwiseNll s;
  s.mean_nll = {10, 1, 2, 3, 4, 5, 6, 100};
  s.n_tokens = {1, 1, 1, 1, 1, 1, 1, 1};
  double m = 0;
  ASSERT_TRUE(middle_half_nll(s, m));
  EXPECT_DOUBLE_EQ(m, (2 + 3 + 4 + 5) / 4.0);  // steps [2, 6)
  s.mean_nll = {1, 2, 3};
  s.n_tokens = {1, 1, 1};
  ASSERT_TRUE(middle_half_nll(s, m));
  EXPECT_DOUBLE_EQ(m, 2.0);  // steps [0, 3)
  s.n_tokens = {0, 0, 0};
  EXPECT_FALSE(middle_half_nll(s, m));
}

TEST(Aggregate, PoolsByStepTokenWeighted) {
  StepwiseNll a, b;
  a.mean_nll = {1.0, 2.0};
  a.n_tokens = {1, 3};
  b.mean_nll = {3.0};
  b.n_tokens = {3};
  const auto rows = aggregate_stepwise({a, b});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].mean_nll, (1.0 + 9.0) / 4);
  EXPECT_EQ(rows[0].n_tokens, 4u);
  EXPECT_DOUBLE_EQ(rows[1].mean_nll, 2.0);
}

ModelConfig student_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.max_seq_len = 24;
  return c;
}

TEST(Frontier, RowsPerTauAndSeed) {
  const Model<float> m(init_model<float>(student_config(), 0));
  std::vector<Example> short_test;
  for (const char* s : {"abc", "de", "fgh"}) short_test.push_back(make_copy_reverse(s));
  DecodeConfig base;
  base.max_new_tokens = 10;
  base.max_steps = 10;
  const auto one = frontier_sweep(m, short_test, {0.5}, {1, 2, 3}, base, "x");
  EXPECT_EQ(one.size(), 3u);
  const auto rows = frontier_sweep(m, short_test, {0.0, 1.1}, {7}, base, "x", 2.0);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].tps_raw, 10.0);
  EXPECT_DOUBLE_EQ(rows[0].tps_norm, 5.0);
  EXPECT_DOUBLE_EQ(rows[1].tps_raw, 1.0);
  EXPECT_EQ(rows, frontier_sweep(m, short_test, {0.0, 1.1}, {7}, base, "x", 2.0));
  for (const auto& r : rows) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
  }
}

std::vector<MetricsRow> grid(double acc, double tps) {
  std::vector<MetricsRow> rows;
  for (double tau : {0.5, 0.7, 0.9})
    for (std::uint64_t seed : {1, 2}) rows.push_back({"r", tau, seed, acc + tau / 10, tps + tau, tps + tau});
  return rows;
}

TEST(CompareRuns, IdenticalIsZero) {
  const auto c = compare_runs(grid(0.5, 2), grid(0.5, 2));
  EXPECT_EQ(c.mean_accuracy_delta, 0.0);
  EXPECT_EQ(c.mean_tps_delta, 0.0);
  ASSERT_EQ(c.per_tau.size(), 3u);
}

TEST(CompareRuns, UniformTpsShift) {
  const auto c = compare_runs(grid(0.5, 2), grid(0.5, 3));
  for (const auto& d : c.per_tau) EXPECT_DOUBLE_EQ(d.tps_delta(), 1.0);
  EXPECT_DOUBLE_EQ(c.mean_tps_delta, 1.0);
}

TEST(CompareRuns, MismatchedGridRejected) {
  auto b = grid(0.5, 2);
  b.pop_back();
  b.pop_back();
  EXPECT_THROW(compare_runs(grid(0.5, 2), b), UsageError);
}

TEST(Csv, FixedHeaders) {
  const auto dir = std::filesystem::temp_directory_path();
  write_frontier_csv(dir / "f.csv", {{"a,b", 0.5, 3, 0.25, 2.0, 1.0}});
  std::ifstream f(dir / "f.csv");
  std::stringstream fs;
  fs << f.rdbuf();
  EXPECT_EQ(fs.str(), "label,tau,seed,accuracy,tps_raw,tps_norm\n\"a,b\",0.500000,3,0.250000,2.000000,1.000000\n");
  write_stepwise_csv(dir / "s.csv", "base", {{0, 1.5, 4}});
  std::ifstream s(dir / "s.csv");
  std::stringstream ss;
  ss << s.rdbuf();
  EXPECT_EQ(ss.str(), "label,step,mean_nll,n_tokens\nbase,0,1.500000,4\n");
}

}  // namespace
}  // namespace trims
