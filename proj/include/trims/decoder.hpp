#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trims/corpus.hpp"
#include "trims/model.hpp"
#include "trims/parallel.hpp"

namespace trims {

struct DecodeConfig {
  int max_new_tokens = 48;
  int max_steps = 48;
  double threshold = 0.9;
  int min_commit = 1;
  // Stop once an END is committed and every earlier position is committed;
  // the remaining trailing positions are filled with END without a step.
  bool stop_at_end = true;
  std::uint64_t seed = 0;  // unused by greedy decoding

  void validate() const {
    if (max_new_tokens < 1) throw UsageError("decode config: max_new_tokens must be positive");
    if (max_steps < 1) throw UsageError("decode config: max_steps must be at least 1");
    if (min_commit < 1) throw UsageError("decode config: min_commit must be at least 1");
    if (!(threshold >= 0.0)) throw UsageError("decode config: threshold must be non-negative");
  }
};

inline nlohmann::json to_json(const DecodeConfig& c) {
  return {{"max_new_tokens", c.max_new_tokens}, {"max_steps", c.max_steps}, {"threshold", c.threshold},
          {"min_commit", c.min_commit},         {"stop_at_end", c.stop_at_end}, {"seed", c.seed}};
}

inline DecodeConfig decode_config_from_json(const nlohmann::json& j) {
  DecodeConfig c;
  c.max_new_tokens = j.at("max_new_tokens").get<int>();
  c.max_steps = j.at("max_steps").get<int>();
  c.threshold = j.at("threshold").get<double>();
  c.min_commit = j.at("min_commit").get<int>();
  c.stop_at_end = j.at("stop_at_end").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

struct StepRecord {
  int step = 0;
  std::vector<int> positions;  // response-relative, ascending
  std::vector<int> tokens;
  std::vector<double> confidences;
  bool forced = false;  // max_steps reached: every remaining mask committed

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct DecodeTrace {
  std::vector<int> prompt;
  DecodeConfig config;
  std::vector<StepRecord> steps;
  std::vector<int> final_tokens;  // response region, length max_new_tokens
  // Positions >= auto_fill_begin were filled with END after an early stop.
  int auto_fill_begin = 0;

  int steps_used() const { return static_cast<int>(steps.size()); }

  std::size_t generated_tokens() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.positions.size();
    return n;
  }

  friend bool operator==(const DecodeTrace& a, const DecodeTrace& b) {
    return a.prompt == b.prompt && a.steps == b.steps && a.final_tokens == b.final_tokens &&
           a.auto_fill_begin == b.auto_fill_begin;
  }
};

// Tokens predicted per step: committed tokens / steps.
inline double tps(const DecodeTrace& trace) {
  if (trace.steps_used() < 1) throw DataError("tps: trace has no steps");
  return static_cast<double>(trace.generated_tokens()) / static_cast<double>(trace.steps_used());
}

// Confidence-threshold parallel decoding over a fully masked response region.
// Each step runs one forward pass, takes the greedy candidate per masked
// position (MASK and PAD excluded) with its probability as confidence, and
// commits every position at or above the threshold. When fewer than
// min_commit qualify, the min_commit most confident positions are committed
// (ties to the lowest position). Committed tokens are never revised.
template <class T>
DecodeTrace decode(const Model<T>& model, const std::vector<int>& prompt, const DecodeConfig& cfg) {
  cfg.validate();
  if (model.config().attention_mode != AttentionMode::bidirectional) {
    throw UsageError("decode: model must use bidirectional attention");
  }
  const auto n = static_cast<std::size_t>(cfg.max_new_tokens);
  if (prompt.size() + n > static_cast<std::size_t>(model.config().max_seq_len)) {
    throw DataError("decode: prompt length " + std::to_string(prompt.size()) + " + max_new_tokens " +
                    std::to_string(n) + " exceeds max_seq_len " + std::to_string(model.config().max_seq_len));
  }
  const std::size_t vocab = static_cast<std::size_t>(model.config().vocab_size);
  const int mask_id = model.config().mask_id;
  const int pad_id = model.config().pad_id;

  DecodeTrace trace;
  trace.prompt = prompt;
  trace.config = cfg;
  std::vector<int> seq = prompt;
  seq.resize(prompt.size() + n, mask_id);
  std::vector<bool> committed(n, false);
  std::size_t remaining = n;

  struct Candidate {
    std::size_t pos;
    int token;
    double conf;
  };

  while (remaining > 0) {
    if (cfg.stop_at_end) {
      std::size_t first_end = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (committed[i] && seq[prompt.size() + i] == kEndId) {
          first_end = i;
          break;
        }
      }
      if (first_end < n) {
        bool prefix_done = true;
        for (std::size_t i = 0; i < first_end && prefix_done; ++i) prefix_done = committed[i];
        if (prefix_done) {
          for (std::size_t i = first_end + 1; i < n; ++i) {
            if (!committed[i]) seq[prompt.size() + i] = kEndId;
          }
          // Everything past the first committed END is fill, committed or not.
          trace.auto_fill_begin = static_cast<int>(first_end + 1);
          break;
        }
      }
    }

    const Tensor<T> logits = model.logits(std::span<const int>(seq));
    std::vector<Candidate> cands;
    cands.reserve(remaining);
    for (std::size_t i = 0; i < n; ++i) {
      if (committed[i]) continue;
      auto row = logits.row(prompt.size() + i);
      double mx = -std::numeric_limits<double>::infinity();
      int best = -1;
      for (std::size_t v = 0; v < vocab; ++v) {
        if (static_cast<int>(v) == mask_id || static_cast<int>(v) == pad_id) continue;
        const double lv = static_cast<double>(row[v]);
        if (lv > mx) {
          mx = lv;
          best = static_cast<int>(v);
        }
      }
      double z = 0;
      for (std::size_t v = 0; v < vocab; ++v) {
        if (static_cast<int>(v) == mask_id || static_cast<int>(v) == pad_id) continue;
        z += std::exp(static_cast<double>(row[v]) - mx);
      }
      cands.push_back(Candidate{i, best, 1.0 / z});
    }

    StepRecord rec;
    rec.step = trace.steps_used();
    std::vector<Candidate> chosen;
    for (const auto& c : cands) {
      if (c.conf >= cfg.threshold) chosen.push_back(c);
    }
    const auto need = std::min<std::size_t>(static_cast<std::size_t>(cfg.min_commit), cands.size());
    if (chosen.size() < need) {
      auto ranked = cands;
      std::stable_sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) {
        return a.conf > b.conf;  // stable: equal confidence keeps ascending position
      });
      chosen.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(need));
    }
    // Last permitted step: whatever is still masked is committed greedily.
    if (rec.step == cfg.max_steps - 1 && chosen.size() < cands.size()) {
      rec.forced = true;
      chosen = cands;
    }
    std::sort(chosen.begin(), chosen.end(), [](const Candidate& a, const Candidate& b) { return a.pos < b.pos; });
    for (const auto& c : chosen) {
      committed[c.pos] = true;
      seq[prompt.size() + c.pos] = c.token;
      rec.positions.push_back(static_cast<int>(c.pos));
      rec.tokens.push_back(c.token);
      rec.confidences.push_back(c.conf);
    }
    remaining -= chosen.size();
    trace.steps.push_back(std::move(rec));
  }
  if (trace.auto_fill_begin == 0) trace.auto_fill_begin = static_cast<int>(n);
  trace.final_tokens.assign(seq.begin() + static_cast<std::ptrdiff_t>(prompt.size()), seq.end());
  return trace;
}

struct BatchResult {
  std::vector<DecodeTrace> traces;
  std::vector<bool> correct;
  double accuracy = 0.0;
  double mean_tps = 0.0;
};

template <class T>
BatchResult decode_batch(const Model<T>& model, const std::vector<Example>& examples, const DecodeConfig& cfg) {
  if (examples.empty()) throw UsageError("decode_batch: no examples");
  BatchResult out;
  out.traces.resize(examples.size());
  parallel_for(examples.size(), [&](std::size_t i) {
    try {
      out.traces[i] = decode(model, examples[i].prompt, cfg);
    } catch (const DataError& e) {
      throw DataError("example " + std::to_string(i) + ": " + e.what());
    }
  });
  std::size_t right = 0;
  double tps_sum = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const bool ok = check_answer(examples[i], out.traces[i].final_tokens);
    out.correct.push_back(ok);
    right += ok ? 1 : 0;
    tps_sum += tps(out.traces[i]);
  }
  out.accuracy = static_cast<double>(right) / static_cast<double>(examples.size());
  out.mean_tps = tps_sum / static_cast<double>(examples.size());
  return out;
}

// ---------------------------------------------------------------------------
// Trace file: per trace, one header record followed by one record per step.
//   {"trace": i, "prompt": [...], "config": {...}, "steps_used": s, "final": [...], "auto_fill_begin": f}
//   {"trace": i, "step": j, "positions": [...], "tokens": [...], "confidences": [...], "forced": b}

inline void write_traces(const std::filesystem::path& path, const std::vector<DecodeTrace>& traces) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    os << nlohmann::json{{"trace", i},
                         {"prompt", t.prompt},
                         {"config", to_json(t.config)},
                         {"steps_used", t.steps_used()},
                         {"final", t.final_tokens},
                         {"auto_fill_begin", t.auto_fill_begin}}
              .dump()
       << '\n';
    for (const auto& s : t.steps) {
      os << nlohmann::json{{"trace", i},
                           {"step", s.step},
                           {"positions", s.positions},
                           {"tokens", s.tokens},
                           {"confidences", s.confidences},
                           {"forced", s.forced}}
                .dump()
         << '\n';
    }
  }
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

inline std::vector<DecodeTrace> read_traces(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open trace file '" + path.string() + "'");
  std::vector<DecodeTrace> traces;
  std::vector<int> expected_steps;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto idx = j.at("trace").get<std::size_t>();
      if (j.contains("prompt")) {
        if (idx != traces.size()) throw DataError("trace headers out of order");
        DecodeTrace t;
        t.prompt = j.at("prompt").get<std::vector<int>>();
        t.config = decode_config_from_json(j.at("config"));
        t.final_tokens = j.at("final").get<std::vector<int>>();
        t.auto_fill_begin = j.at("auto_fill_begin").get<int>();
        expected_steps.push_back(j.at("steps_used").get<int>());
        traces.push_back(std::move(t));
      } else {
        if (traces.empty() || idx != traces.size() - 1) throw DataError("step record for unknown trace");
        StepRecord s;
        s.step = j.at("step").get<int>();
        s.positions = j.at("positions").get<std::vector<int>>();
        s.tokens = j.at("tokens").get<std::vector<int>>();
        s.confidences = j.at("confidences").get<std::vector<double>>();
        s.forced = j.at("forced").get<bool>();
        if (s.positions.size() != s.tokens.size() || s.positions.size() != s.confidences.size()) {
          throw DataError("step record field lengths differ");
        }
        traces.back().steps.push_back(std::move(s));
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (traces[i].steps_used() != expected_steps[i]) {
      throw DataError(path.string() + ": trace " + std::to_string(i) + " declares " +
                      std::to_string(expected_steps[i]) + " steps but has " + std::to_string(traces[i].steps_used()));
    }
  }
  return traces;
}

}  // namespace trims
