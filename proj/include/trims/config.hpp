#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "trims/analysis.hpp"
#include "trims/bucketing.hpp"
#include "trims/corpus.hpp"
#include "trims/decoder.hpp"
#include "trims/teacher.hpp"
#include "trims/trainer.hpp"

namespace trims {

inline constexpr const char* kOutDirEnv = "TRIMS_OUT_DIR";

enum class ValueKind { integer, unsigned_integer, real, boolean, text, real_list };

struct ConfigKey {
  std::string name;
  ValueKind kind;
  std::string default_value;
  std::string help;
};

// Every recognised key, in print order.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", ValueKind::unsigned_integer, "0", "global seed; every stage seed derives from it"},
      {"out_dir", ValueKind::text, "trims_out", "artifact directory (default from $TRIMS_OUT_DIR)"},
      {"corpus.task", ValueKind::text, "addition", "addition | copy_reverse | sorted_digits"},
      {"corpus.train_size", ValueKind::unsigned_integer, "2000", "training examples"},
      {"corpus.test_size", ValueKind::unsigned_integer, "500", "held-out examples (disjoint prompts)"},
      {"model.d_model", ValueKind::integer, "128", "hidden width (teacher and student)"},
      {"model.n_layers", ValueKind::integer, "4", "transformer blocks"},
      {"model.n_heads", ValueKind::integer, "4", "attention heads"},
      {"model.max_seq_len", ValueKind::integer, "128", "positions"},
      {"teacher.epochs", ValueKind::integer, "8", "teacher passes over the training set"},
      {"teacher.batch_size", ValueKind::integer, "16", "examples per optimizer step"},
      {"teacher.lr", ValueKind::real, "0.001", "peak learning rate"},
      {"teacher.weight_decay", ValueKind::real, "0.1", "AdamW decoupled decay"},
      {"teacher.eval_every", ValueKind::integer, "20", "steps between probe-loss records"},
      {"score.metric", ValueKind::text, "nll", "nll | entropy"},
      {"bucket.k", ValueKind::integer, "8", "number of difficulty buckets K"},
      {"bucket.ordering", ValueKind::text, "hard_to_easy", "hard_to_easy | easy_to_hard | random"},
      {"train.trajectory_ratio", ValueKind::real, "0.1", "per-draw probability of trajectory masking"},
      {"train.p_context", ValueKind::real, "0.05", "mask probability of context-group tokens"},
      {"train.p_future", ValueKind::real, "0.95", "mask probability of future-group tokens"},
      {"train.epochs", ValueKind::integer, "30", "student passes over the training set"},
      {"train.batch_size", ValueKind::integer, "16", "examples per optimizer step"},
      {"train.lr", ValueKind::real, "0.001", "peak learning rate"},
      {"train.weight_decay", ValueKind::real, "0.1", "AdamW decoupled decay"},
      {"train.warmup_ratio", ValueKind::real, "0.03", "fraction of steps in linear warmup"},
      {"train.grad_clip", ValueKind::real, "1.0", "global gradient-norm clip (0 disables)"},
      {"train.loss_weighting", ValueKind::text, "elbo", "elbo | unweighted"},
      {"train.weight_clip", ValueKind::real, "20", "cap on the ELBO weight"},
      {"train.gen_len", ValueKind::integer, "48", "response region length"},
      {"decode.max_new_tokens", ValueKind::integer, "48", "response positions to fill"},
      {"decode.max_steps", ValueKind::integer, "48", "step budget"},
      {"decode.threshold", ValueKind::real, "0.9", "confidence threshold tau"},
      {"decode.min_commit", ValueKind::integer, "1", "forced commits per step"},
      {"decode.stop_at_end", ValueKind::boolean, "true", "stop once END closes the answer"},
      {"decode.num_examples", ValueKind::unsigned_integer, "0", "test examples to trace (0 = all)"},
      {"eval.taus", ValueKind::real_list, "0.5,0.6,0.7,0.8,0.9,0.95,1.1", "frontier thresholds"},
      {"eval.baseline_tps", ValueKind::real, "1.0", "raw TPS that normalises to 1.0"},
      {"eval.label", ValueKind::text, "student", "run label in CSV outputs"},
  };
  return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<double> parse_real_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) throw UsageError(key + ": '" + item + "' is not a number");
    out.push_back(x);
  }
  if (out.empty()) throw UsageError(key + ": empty list");
  return out;
}

// Syntax check only; cross-field checks happen when a stage builds its config.
inline void check_value(const ConfigKey& k, const std::string& v) {
  auto fail = [&](const std::string& what) { return UsageError(k.name + ": '" + v + "' is not " + what); };
  switch (k.kind) {
    case ValueKind::integer:
    case ValueKind::unsigned_integer: {
      if (v.empty()) throw fail("an integer");
      const bool neg = v[0] == '-';
      if (neg && k.kind == ValueKind::unsigned_integer) throw fail("a non-negative integer");
      if (!std::all_of(v.begin() + (neg ? 1 : 0), v.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
          v.size() == (neg ? 1u : 0u)) {
        throw fail("an integer");
      }
      try {
        if (k.kind == ValueKind::integer) (void)std::stoi(v);
        else (void)std::stoull(v);
      } catch (const std::exception&) {
        throw fail("in range");
      }
      break;
    }
    case ValueKind::real: {
      std::size_t used = 0;
      try {
        (void)std::stod(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (v.empty() || used != v.size()) throw fail("a number");
      break;
    }
    case ValueKind::boolean:
      if (v != "true" && v != "false") throw fail("true or false");
      break;
    case ValueKind::real_list: parse_real_list(k.name, v); break;
    case ValueKind::text:
      if (v.empty()) throw fail("a non-empty string");
      break;
  }
}

// Effective configuration: every key holds a value and where it came from.
class RunConfig {
 public:
  struct Entry {
    std::string value;
    std::string source;  // default | env | file:<path> | flag
  };

  RunConfig() {
    for (const auto& k : config_keys()) entries_[k.name] = {k.default_value, "default"};
    if (const char* env = std::getenv(kOutDirEnv); env && *env) entries_["out_dir"] = {env, "env"};
  }

  void set(const std::string& key, const std::string& value, const std::string& source) {
    const ConfigKey* k = find_key(key);
    if (!k) throw UsageError("unknown config key '" + key + "'");
    check_value(*k, value);
    entries_[key] = {value, source};
  }

  // "key=value" from the command line.
  void set_assignment(const std::string& assignment, const std::string& source = "flag") {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw UsageError("expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), source);
  }

  // Flat "key = value" lines; '#' starts a comment.
  void load_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open config file '" + path.string() + "'");
    std::string line;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(is, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = path.string() + ":" + std::to_string(line_no);
      if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      if (seen.count(key)) {
        throw UsageError(where + ": key '" + key + "' already set on line " + std::to_string(seen[key]));
      }
      seen[key] = line_no;
      try {
        set(key, trim(line.substr(eq + 1)), "file:" + path.string());
      } catch (const UsageError& e) {
        throw UsageError(where + ": " + e.what());
      }
    }
  }

  const Entry& entry(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
  }

  const std::string& str(const std::string& key) const { return entry(key).value; }
  int integer(const std::string& key) const { return std::stoi(str(key)); }
  std::uint64_t uint(const std::string& key) const { return std::stoull(str(key)); }
  double real(const std::string& key) const { return std::stod(str(key)); }
  bool boolean(const std::string& key) const { return str(key) == "true"; }
  std::vector<double> reals(const std::string& key) const { return parse_real_list(key, str(key)); }

  std::filesystem::path out_dir() const { return str("out_dir"); }
  std::uint64_t seed() const { return uint("seed"); }

  // "key = value  # source" per key, in registry order. Artifact copies
  // omit sources and out_dir so they depend only on content settings.
  std::string render(bool with_source = true) const {
    std::string out;
    for (const auto& k : config_keys()) {
      if (!with_source && k.name == "out_dir") continue;
      const auto& e = entries_.at(k.name);
      out += k.name + " = " + e.value;
      if (with_source) out += "  # " + e.source;
      out += '\n';
    }
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Stage configurations. Stage seeds are derived from the global seed.

enum class StageSeed : std::uint64_t {
  corpus_train = 0xc0,
  corpus_test = 0xc1,
  teacher = 0x7e,
  student_init = 0x51,
  train = 0x7a,
  bucket_random = 0xb0
};

inline std::uint64_t stage_seed(const RunConfig& rc, StageSeed s) {
  return hash_key({rc.seed(), static_cast<std::uint64_t>(s)});
}

inline ModelConfig model_config(const RunConfig& rc, AttentionMode mode) {
  ModelConfig c;
  c.d_model = rc.integer("model.d_model");
  c.n_layers = rc.integer("model.n_layers");
  c.n_heads = rc.integer("model.n_heads");
  c.max_seq_len = rc.integer("model.max_seq_len");
  c.attention_mode = mode;
  c.validate();
  return c;
}

inline TeacherConfig teacher_config(const RunConfig& rc) {
  TeacherConfig t;
  t.model = model_config(rc, AttentionMode::causal);
  t.epochs = rc.integer("teacher.epochs");
  t.batch_size = rc.integer("teacher.batch_size");
  t.optim.lr = rc.real("teacher.lr");
  t.optim.weight_decay = rc.real("teacher.weight_decay");
  t.eval_every = rc.integer("teacher.eval_every");
  if (t.epochs < 0) throw UsageError("teacher.epochs must be non-negative");
  if (t.batch_size < 1) throw UsageError("teacher.batch_size must be positive");
  return t;
}

inline TrainConfig train_config(const RunConfig& rc) {
  TrainConfig c;
  c.trajectory_ratio = rc.real("train.trajectory_ratio");
  c.p_context = rc.real("train.p_context");
  c.p_future = rc.real("train.p_future");
  c.k = rc.integer("bucket.k");
  c.ordering = parse_ordering(rc.str("bucket.ordering"));
  c.epochs = rc.integer("train.epochs");
  c.batch_size = rc.integer("train.batch_size");
  c.optim.lr = rc.real("train.lr");
  c.optim.weight_decay = rc.real("train.weight_decay");
  c.optim.warmup_ratio = rc.real("train.warmup_ratio");
  c.optim.grad_clip = rc.real("train.grad_clip");
  c.loss_weighting = parse_weighting(rc.str("train.loss_weighting"));
  c.weight_clip = rc.real("train.weight_clip");
  c.gen_len = rc.integer("train.gen_len");
  c.seed = stage_seed(rc, StageSeed::train);
  c.validate();
  return c;
}

inline DecodeConfig decode_config(const RunConfig& rc) {
  DecodeConfig c;
  c.max_new_tokens = rc.integer("decode.max_new_tokens");
  c.max_steps = rc.integer("decode.max_steps");
  c.threshold = rc.real("decode.threshold");
  c.min_commit = rc.integer("decode.min_commit");
  c.stop_at_end = rc.boolean("decode.stop_at_end");
  c.seed = rc.seed();
  c.validate();
  return c;
}

}  // namespace trims
