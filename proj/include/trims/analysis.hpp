#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "trims/decoder.hpp"
#include "trims/teacher.hpp"

namespace trims {

// Per-step teacher NLL of one trace. Tokens are scored teacher-forced on the
// final sequence up to (not including) its first END; END fill is never
// scored since the teacher models completions only. Steps that committed no
// scored token keep n_tokens = 0 and mean_nll = 0.
struct StepwiseNll {
  std::vector<double> mean_nll;
  std::vector<std::size_t> n_tokens;
  double sequence_mean = 0.0;  // mean over all scored tokens
  std::size_t scored_tokens = 0;

  std::size_t steps() const { return mean_nll.size(); }

  // Token-weighted mean over all steps; equals sequence_mean up to rounding.
  double weighted_mean() const {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mean_nll.size(); ++i) {
      s += mean_nll[i] * static_cast<double>(n_tokens[i]);
      n += n_tokens[i];
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
  }
};

inline std::size_t scored_length(const std::vector<int>& final_tokens) {
  const auto it = std::find(final_tokens.begin(), final_tokens.end(), kEndId);
  return static_cast<std::size_t>(it - final_tokens.begin());
}

template <class T>
StepwiseNll stepwise_nll(const Model<T>& teacher, const DecodeTrace& trace) {
  if (trace.steps.empty()) throw DataError("stepwise_nll: trace has no steps");
  const std::size_t len = scored_length(trace.final_tokens);
  std::vector<double> token_nll;
  if (len > 0) {
    Example ex;
    ex.prompt = trace.prompt;
    ex.completion.assign(trace.final_tokens.begin(), trace.final_tokens.begin() + static_cast<std::ptrdiff_t>(len));
    token_nll = score_tokens(teacher, ex, DifficultyMetric::nll);
  }
  StepwiseNll out;
  out.mean_nll.assign(trace.steps.size(), 0.0);
  out.n_tokens.assign(trace.steps.size(), 0);
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    double sum = 0;
    std::size_t n = 0;
    for (int pos : trace.steps[s].positions) {
      if (pos < 0 || static_cast<std::size_t>(pos) >= len) continue;
      sum += token_nll[static_cast<std::size_t>(pos)];
      ++n;
    }
    out.n_tokens[s] = n;
    out.mean_nll[s] = n == 0 ? 0.0 : sum / static_cast<double>(n);
    out.scored_tokens += n;
  }
  out.sequence_mean = len == 0 ? 0.0 : std::accumulate(token_nll.begin(), token_nll.end(), 0.0) / static_cast<double>(len);
  return out;
}

template <class T>
std::vector<StepwiseNll> stepwise_nll_all(const Model<T>& teacher, const std::vector<DecodeTrace>& traces) {
  std::vector<StepwiseNll> out(traces.size());
  parallel_for(traces.size(), [&](std::size_t i) {
    try {
      out[i] = stepwise_nll(teacher, traces[i]);
    } catch (const DataError& e) {
      throw DataError("trace " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

// Token-weighted mean NLL over the middle half of a trace's steps,
// [floor(S/4), ceil(3S/4)). Returns false when that window scored nothing.
inline bool middle_half_nll(const StepwiseNll& s, double& mean) {
  const std::size_t steps = s.steps();
  const std::size_t lo = steps / 4;
  const std::size_t hi = (3 * steps + 3) / 4;
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = lo; i < hi && i < steps; ++i) {
    sum += s.mean_nll[i] * static_cast<double>(s.n_tokens[i]);
    n += s.n_tokens[i];
  }
  if (n == 0) return false;
  mean = sum / static_cast<double>(n);
  return true;
}

struct StepwiseRow {
  std::size_t step = 0;
  double mean_nll = 0.0;
  std::size_t n_tokens = 0;
};

// Pools traces by step index, token-weighted.
inline std::vector<StepwiseRow> aggregate_stepwise(const std::vector<StepwiseNll>& series) {
  std::size_t max_steps = 0;
  for (const auto& s : series) max_steps = std::max(max_steps, s.steps());
  std::vector<double> sum(max_steps, 0.0);
  std::vector<std::size_t> count(max_steps, 0);
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.steps(); ++i) {
      sum[i] += s.mean_nll[i] * static_cast<double>(s.n_tokens[i]);
      count[i] += s.n_tokens[i];
    }
  }
  std::vector<StepwiseRow> rows;
  for (std::size_t i = 0; i < max_steps; ++i) {
    rows.push_back({i, count[i] == 0 ? 0.0 : sum[i] / static_cast<double>(count[i]), count[i]});
  }
  return rows;
}

struct MetricsRow {
  std::string label;
  double tau = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double tps_raw = 0.0;
  double tps_norm = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

// One row per (tau, seed), tau-major. tps_norm = tps_raw / baseline_tps.
template <class T>
std::vector<MetricsRow> frontier_sweep(const Model<T>& model, const std::vector<Example>& testset,
                                       const std::vector<double>& taus, const std::vector<std::uint64_t>& seeds,
                                       DecodeConfig base, const std::string& label, double baseline_tps = 1.0) {
  if (!(baseline_tps > 0.0)) throw UsageError("frontier_sweep: baseline TPS must be positive");
  std::vector<MetricsRow> rows;
  for (double tau : taus) {
    for (std::uint64_t seed : seeds) {
      base.threshold = tau;
      base.seed = seed;
      const auto r = decode_batch(model, testset, base);
      rows.push_back({label, tau, seed, r.accuracy, r.mean_tps, r.mean_tps / baseline_tps});
    }
  }
  return rows;
}

struct TauDelta {
  double tau = 0.0;
  double accuracy_a = 0.0, accuracy_b = 0.0;
  double tps_a = 0.0, tps_b = 0.0;
  double accuracy_delta() const { return accuracy_b - accuracy_a; }
  double tps_delta() const { return tps_b - tps_a; }
};

struct RunComparison {
  std::vector<TauDelta> per_tau;  // ascending tau
  double mean_accuracy_delta = 0.0;
  double mean_tps_delta = 0.0;
};

struct TauMeans {
  double tau = 0.0;
  double accuracy = 0.0;
  double tps = 0.0;
  std::size_t rows = 0;
};

// Seed-averaged accuracy and raw TPS per tau, ascending.
inline std::vector<TauMeans> mean_by_tau(const std::vector<MetricsRow>& rows) {
  std::map<double, TauMeans> m;
  for (const auto& r : rows) {
    auto& e = m[r.tau];
    e.tau = r.tau;
    e.accuracy += r.accuracy;
    e.tps += r.tps_raw;
    ++e.rows;
  }
  std::vector<TauMeans> out;
  for (auto& [tau, e] : m) {
    e.accuracy /= static_cast<double>(e.rows);
    e.tps /= static_cast<double>(e.rows);
    out.push_back(e);
  }
  return out;
}

// Deltas are b - a, per tau after averaging over seeds.
inline RunComparison compare_runs(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b) {
  const auto ma = mean_by_tau(a);
  const auto mb = mean_by_tau(b);
  if (ma.empty()) throw UsageError("compare_runs: no rows");
  bool same = ma.size() == mb.size();
  for (std::size_t i = 0; same && i < ma.size(); ++i) same = ma[i].tau == mb[i].tau;
  if (!same) throw UsageError("compare_runs: runs use different tau grids");
  RunComparison c;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    TauDelta d{ma[i].tau, ma[i].accuracy, mb[i].accuracy, ma[i].tps, mb[i].tps};
    c.mean_accuracy_delta += d.accuracy_delta();
    c.mean_tps_delta += d.tps_delta();
    c.per_tau.push_back(d);
  }
  c.mean_accuracy_delta /= static_cast<double>(ma.size());
  c.mean_tps_delta /= static_cast<double>(ma.size());
  return c;
}

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline void write_frontier_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << "label,tau,seed,accuracy,tps_raw,tps_norm\n";
  for (const auto& r : rows) {
    os << csv_field(r.label) << ',' << fmt_num(r.tau) << ',' << r.seed << ',' << fmt_num(r.accuracy) << ','
       << fmt_num(r.tps_raw) << ',' << fmt_num(r.tps_norm) << '\n';
  }
}

inline void write_stepwise_csv(const std::filesystem::path& path, const std::string& label,
                               const std::vector<StepwiseRow>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << "label,step,mean_nll,n_tokens\n";
  for (const auto& r : rows) {
    os << csv_field(label) << ',' << r.step << ',' << fmt_num(r.mean_nll) << ',' << r.n_tokens << '\n';
  }
}

inline std::vector<MetricsRow> read_frontier_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open frontier CSV '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line != "label,tau,seed,accuracy,tps_raw,tps_norm") {
    throw DataError(path.string() + ":1: unexpected frontier header");
  }
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    // The label may be quoted; the five numeric fields never are.
    std::vector<std::string> tail;
    std::string rest = line;
    for (int i = 0; i < 5; ++i) {
      const auto comma = rest.rfind(',');
      if (comma == std::string::npos) throw DataError(path.string() + ":" + std::to_string(line_no) + ": too few fields");
      tail.insert(tail.begin(), rest.substr(comma + 1));
      rest.resize(comma);
    }
    if (rest.size() >= 2 && rest.front() == '"' && rest.back() == '"') {
      std::string unq;
      for (std::size_t i = 1; i + 1 < rest.size(); ++i) {
        unq += rest[i];
        if (rest[i] == '"') ++i;
      }
      rest = unq;
    }
    try {
      rows.push_back({rest, std::stod(tail[0]), std::stoull(tail[1]), std::stod(tail[2]), std::stod(tail[3]),
                      std::stod(tail[4])});
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

}  // namespace trims
