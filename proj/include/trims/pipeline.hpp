#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "trims/config.hpp"

namespace trims {

// Artifact names inside out_dir, with the stage that writes each.
namespace files {
inline constexpr const char* corpus_train = "corpus_train.jsonl";
inline constexpr const char* corpus_test = "corpus_test.jsonl";
inline constexpr const char* teacher = "teacher.ckpt";
inline constexpr const char* teacher_log = "teacher_log.jsonl";
inline constexpr const char* scored = "scored_train.jsonl";
inline constexpr const char* bucketed = "bucketed_train.jsonl";
inline constexpr const char* student = "student.ckpt";
inline constexpr const char* train_log = "train_log.jsonl";
inline constexpr const char* traces = "traces.jsonl";
inline constexpr const char* frontier = "frontier.csv";
inline constexpr const char* stepwise = "stepwise_nll.csv";
inline constexpr const char* run_config = "run_config.txt";
}  // namespace files

inline std::string producer_of(const std::string& file) {
  if (file == files::corpus_train || file == files::corpus_test) return "gen-corpus";
  if (file == files::teacher) return "train-teacher";
  if (file == files::scored) return "score";
  if (file == files::bucketed) return "bucket";
  if (file == files::student) return "train";
  if (file == files::traces) return "decode";
  return "pipeline";
}

inline std::filesystem::path require_input(const RunConfig& rc, const std::string& file) {
  const auto p = rc.out_dir() / file;
  if (!std::filesystem::exists(p)) {
    throw DataError("missing input '" + p.string() + "'; run `" + producer_of(file) + "` first");
  }
  return p;
}

inline std::filesystem::path output_path(const RunConfig& rc, const std::string& file) {
  std::filesystem::create_directories(rc.out_dir());
  return rc.out_dir() / file;
}

inline void record_config(const RunConfig& rc) {
  std::ofstream os(output_path(rc, files::run_config), std::ios::binary | std::ios::trunc);
  os << rc.render(false);
}

inline std::size_t max_seq_len(const RunConfig& rc) { return static_cast<std::size_t>(rc.integer("model.max_seq_len")); }

// ---------------------------------------------------------------------------

struct CorpusSummary {
  std::size_t train = 0;
  std::size_t test = 0;
};

// Test prompts never appear in the training split.
inline CorpusSummary stage_gen_corpus(const RunConfig& rc, std::ostream& log) {
  const auto task = parse_task_kind(rc.str("corpus.task"));
  const auto n_train = rc.uint("corpus.train_size");
  const auto n_test = rc.uint("corpus.test_size");
  if (n_train == 0 || n_test == 0) throw UsageError("corpus.train_size and corpus.test_size must be positive");
  const auto train = gen_corpus(task, n_train, stage_seed(rc, StageSeed::corpus_train));
  std::set<std::vector<int>> seen;
  for (const auto& ex : train) seen.insert(ex.prompt);
  std::vector<Example> test;
  for (const auto& ex : gen_corpus(task, 4 * n_test + 64, stage_seed(rc, StageSeed::corpus_test))) {
    if (test.size() == n_test) break;
    if (seen.insert(ex.prompt).second) test.push_back(ex);
  }
  if (test.size() < n_test) {
    throw DataError("gen-corpus: could only find " + std::to_string(test.size()) + " test prompts disjoint from training");
  }
  write_dataset(output_path(rc, files::corpus_train), train);
  write_dataset(output_path(rc, files::corpus_test), test);
  record_config(rc);
  log << "gen-corpus: " << train.size() << " train, " << test.size() << " test (" << to_string(task) << ")\n";
  return {train.size(), test.size()};
}

inline std::vector<Example> plain_examples(const Dataset& d) {
  std::vector<Example> out;
  out.reserve(d.examples.size());
  for (const auto& s : d.examples) out.push_back(s.example);
  return out;
}

inline TeacherLog stage_train_teacher(const RunConfig& rc, std::ostream& log) {
  const auto data = read_dataset(require_input(rc, files::corpus_train), max_seq_len(rc));
  TeacherLog tlog;
  const auto ck = train_teacher<float>(plain_examples(data), teacher_config(rc), stage_seed(rc, StageSeed::teacher), &tlog);
  save_checkpoint(output_path(rc, files::teacher), ck);
  std::ofstream os(output_path(rc, files::teacher_log), std::ios::binary | std::ios::trunc);
  for (std::size_t i = 0; i < tlog.eval_steps.size(); ++i) {
    os << nlohmann::json{{"step", tlog.eval_steps[i]}, {"probe_loss", tlog.eval_losses[i]}}.dump() << '\n';
  }
  record_config(rc);
  log << "train-teacher: " << ck.step << " steps";
  if (!tlog.eval_losses.empty()) log << ", final probe loss " << fmt_num(tlog.eval_losses.back());
  log << '\n';
  return tlog;
}

inline void stage_score(const RunConfig& rc, std::ostream& log) {
  const auto teacher_path = require_input(rc, files::teacher);
  const auto data = read_dataset(require_input(rc, files::corpus_train), max_seq_len(rc));
  const Model<float> teacher(load_checkpoint<float>(teacher_path));
  const auto metric = parse_metric(rc.str("score.metric"));
  const auto scored = score_corpus(teacher, data.examples, metric);
  write_dataset(output_path(rc, files::scored), Dataset{std::nullopt, scored});
  record_config(rc);
  log << "score: " << scored.size() << " examples, metric " << to_string(metric) << '\n';
}

inline void stage_bucket(const RunConfig& rc, std::ostream& log) {
  const auto data = read_dataset(require_input(rc, files::scored), max_seq_len(rc));
  const auto out = bucket_corpus(data.examples, rc.integer("bucket.k"), parse_ordering(rc.str("bucket.ordering")),
                                 stage_seed(rc, StageSeed::bucket_random));
  write_dataset(output_path(rc, files::bucketed), out);
  record_config(rc);
  log << "bucket: K=" << out.table->k << ", ordering " << to_string(out.table->ordering) << ", thresholds [";
  for (std::size_t i = 0; i < out.table->thresholds.size(); ++i) {
    log << (i ? ", " : "") << fmt_num(out.table->thresholds[i]);
  }
  log << "]\n";
}

// With trajectory_ratio = 0 the unbucketed corpus suffices (standard MDLM arm).
inline TrainLog stage_train(const RunConfig& rc, std::ostream& log) {
  const auto cfg = train_config(rc);
  Dataset data;
  if (cfg.trajectory_ratio > 0.0 || std::filesystem::exists(rc.out_dir() / files::bucketed)) {
    data = read_dataset(require_input(rc, files::bucketed), max_seq_len(rc));
  } else {
    data = read_dataset(require_input(rc, files::corpus_train), max_seq_len(rc));
  }
  if (data.table && data.table->k != cfg.k) {
    throw UsageError("train: bucket.k = " + std::to_string(cfg.k) + " but " + files::bucketed + " uses K = " +
                     std::to_string(data.table->k) + "; rerun `bucket`");
  }
  TrainLog tlog;
  auto student = init_model<float>(model_config(rc, AttentionMode::bidirectional), stage_seed(rc, StageSeed::student_init));
  student = train<float>(data, std::move(student), cfg, &tlog);
  save_checkpoint(output_path(rc, files::student), student);
  write_train_log(output_path(rc, files::train_log), tlog);
  record_config(rc);
  log << "train: " << student.step << " steps, " << tlog.trajectory_count() << "/" << tlog.records.size()
      << " trajectory draws";
  if (tlog.skipped_updates) log << ", " << tlog.skipped_updates << " skipped updates";
  log << '\n';
  return tlog;
}

inline std::vector<Example> decode_subset(const RunConfig& rc) {
  auto test = plain_examples(read_dataset(require_input(rc, files::corpus_test), max_seq_len(rc)));
  const auto n = rc.uint("decode.num_examples");
  if (n > 0 && n < test.size()) test.resize(n);
  return test;
}

inline BatchResult stage_decode(const RunConfig& rc, std::ostream& log) {
  const auto student_path = require_input(rc, files::student);
  const auto test = decode_subset(rc);
  const Model<float> student(load_checkpoint<float>(student_path));
  const auto r = decode_batch(student, test, decode_config(rc));
  write_traces(output_path(rc, files::traces), r.traces);
  record_config(rc);
  log << "decode: " << test.size() << " traces, accuracy " << fmt_num(r.accuracy) << ", mean TPS "
      << fmt_num(r.mean_tps) << '\n';
  return r;
}

inline std::vector<MetricsRow> stage_eval(const RunConfig& rc, std::ostream& log) {
  const auto student_path = require_input(rc, files::student);
  const auto test = decode_subset(rc);
  const Model<float> student(load_checkpoint<float>(student_path));
  const auto taus = rc.reals("eval.taus");
  for (double t : taus) {
    if (t < 0.0) throw UsageError("eval.taus: thresholds must be non-negative");
  }
  const auto rows = frontier_sweep(student, test, taus, {rc.seed()}, decode_config(rc), rc.str("eval.label"),
                                   rc.real("eval.baseline_tps"));
  write_frontier_csv(output_path(rc, files::frontier), rows);
  record_config(rc);
  for (const auto& r : rows) {
    log << "eval: tau " << fmt_num(r.tau) << "  accuracy " << fmt_num(r.accuracy) << "  TPS " << fmt_num(r.tps_raw)
        << '\n';
  }
  return rows;
}

struct AnalyzeSummary {
  std::vector<StepwiseRow> rows;
  double middle_half_nll = 0.0;  // mean over traces of the middle-half mean
  std::size_t traces_used = 0;
};

inline AnalyzeSummary stage_analyze(const RunConfig& rc, std::ostream& log) {
  const auto teacher_path = require_input(rc, files::teacher);
  const auto traces = read_traces(require_input(rc, files::traces));
  const Model<float> teacher(load_checkpoint<float>(teacher_path));
  const auto series = stepwise_nll_all(teacher, traces);
  AnalyzeSummary s;
  s.rows = aggregate_stepwise(series);
  double sum = 0;
  for (const auto& x : series) {
    double m = 0;
    if (middle_half_nll(x, m)) {
      sum += m;
      ++s.traces_used;
    }
  }
  s.middle_half_nll = s.traces_used ? sum / static_cast<double>(s.traces_used) : 0.0;
  write_stepwise_csv(output_path(rc, files::stepwise), rc.str("eval.label"), s.rows);
  record_config(rc);
  log << "analyze: " << traces.size() << " traces, middle-half stepwise NLL " << fmt_num(s.middle_half_nll) << '\n';
  return s;
}

inline void stage_pipeline(const RunConfig& rc, std::ostream& log) {
  stage_gen_corpus(rc, log);
  stage_train_teacher(rc, log);
  stage_score(rc, log);
  stage_bucket(rc, log);
  stage_train(rc, log);
  stage_decode(rc, log);
  stage_eval(rc, log);
  stage_analyze(rc, log);
}

}  // namespace trims
