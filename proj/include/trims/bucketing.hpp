#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "trims/bucket_table.hpp"
#include "trims/corpus.hpp"
#include "trims/rng.hpp"

namespace trims {

// Equal-mass thresholds at quantile ranks j/K, j = 1..K-1, with lower
// interpolation: threshold j is sorted[ceil(j * N / K) - 1].
inline BucketTable compute_thresholds(std::span<const double> scores, int k, Ordering ordering = Ordering::hard_to_easy,
                                      std::uint64_t random_seed = 0) {
  if (k < 1) throw UsageError("compute_thresholds: K must be at least 1, got " + std::to_string(k));
  const std::size_t n = scores.size();
  if (n < static_cast<std::size_t>(k)) {
    throw DataError("compute_thresholds: need at least K = " + std::to_string(k) + " scores, got " +
                    std::to_string(n));
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw DataError("compute_thresholds: non-finite score");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  BucketTable table;
  table.k = k;
  table.ordering = ordering;
  table.random_seed = random_seed;
  const auto kk = static_cast<std::size_t>(k);
  for (std::size_t j = 1; j < kk; ++j) {
    const std::size_t rank = (j * n + kk - 1) / kk;  // ceil(j n / K)
    table.thresholds.push_back(sorted[rank - 1]);
  }
  return table;
}

// Quantile bin: number of thresholds strictly below s, so a score equal to a
// threshold lands in the lower bin.
inline int quantile_bin(double score, const BucketTable& table) {
  return static_cast<int>(std::lower_bound(table.thresholds.begin(), table.thresholds.end(), score) -
                          table.thresholds.begin());
}

inline int bucket_of(double score, const BucketTable& table, std::uint64_t example_index, std::uint64_t token_index) {
  switch (table.ordering) {
    case Ordering::hard_to_easy: return table.k - 1 - quantile_bin(score, table);
    case Ordering::easy_to_hard: return quantile_bin(score, table);
    case Ordering::random:
      return static_cast<int>(hash_key({table.random_seed, example_index, token_index}) %
                              static_cast<std::uint64_t>(table.k));
  }
  return 0;
}

inline std::vector<int> assign_buckets(std::span<const double> scores, const BucketTable& table,
                                       std::uint64_t example_index = 0) {
  std::vector<int> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = bucket_of(scores[i], table, example_index, i);
  return out;
}

// Corpus-wide thresholds over every completion token score, then per-token ids.
inline Dataset bucket_corpus(const std::vector<ScoredExample>& data, int k, Ordering ordering,
                             std::uint64_t random_seed) {
  std::vector<double> all;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].scores) throw DataError("bucket_corpus: example " + std::to_string(i) + " has no scores");
    all.insert(all.end(), data[i].scores->begin(), data[i].scores->end());
  }
  Dataset out;
  out.table = compute_thresholds(all, k, ordering, random_seed);
  out.examples = data;
  for (std::size_t i = 0; i < out.examples.size(); ++i) {
    out.examples[i].bucket_ids = assign_buckets(*out.examples[i].scores, *out.table, i);
  }
  return out;
}

}  // namespace trims
