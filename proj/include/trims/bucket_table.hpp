#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "trims/error.hpp"

namespace trims {

enum class Ordering { hard_to_easy, easy_to_hard, random };

inline std::string to_string(Ordering o) {
  switch (o) {
    case Ordering::hard_to_easy: return "hard_to_easy";
    case Ordering::easy_to_hard: return "easy_to_hard";
    case Ordering::random: return "random";
  }
  return "?";
}

inline Ordering parse_ordering(const std::string& s) {
  if (s == "hard_to_easy") return Ordering::hard_to_easy;
  if (s == "easy_to_hard") return Ordering::easy_to_hard;
  if (s == "random") return Ordering::random;
  throw UsageError("ordering must be hard_to_easy, easy_to_hard or random, got '" + s + "'");
}

// Corpus-wide quantile thresholds plus the policy that turns a quantile bin
// into a bucket id.
struct BucketTable {
  int k = 1;
  std::vector<double> thresholds;  // k - 1 values, non-decreasing
  Ordering ordering = Ordering::hard_to_easy;
  std::uint64_t random_seed = 0;

  void validate() const {
    if (k < 1) throw DataError("bucket table: K must be at least 1, got " + std::to_string(k));
    if (thresholds.size() != static_cast<std::size_t>(k - 1)) {
      throw DataError("bucket table: expected " + std::to_string(k - 1) + " thresholds, got " +
                      std::to_string(thresholds.size()));
    }
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
      if (thresholds[i] < thresholds[i - 1]) throw DataError("bucket table: thresholds must be non-decreasing");
    }
  }

  friend bool operator==(const BucketTable&, const BucketTable&) = default;
};

inline nlohmann::json to_json(const BucketTable& t) {
  return {{"k", t.k}, {"thresholds", t.thresholds}, {"ordering", to_string(t.ordering)}, {"seed", t.random_seed}};
}

inline BucketTable bucket_table_from_json(const nlohmann::json& j) {
  BucketTable t;
  t.k = j.at("k").get<int>();
  t.thresholds = j.at("thresholds").get<std::vector<double>>();
  try {
    t.ordering = parse_ordering(j.at("ordering").get<std::string>());
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  t.random_seed = j.at("seed").get<std::uint64_t>();
  t.validate();
  return t;
}

}  // namespace trims
