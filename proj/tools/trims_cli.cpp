// trims: stage-by-stage command line for the TRIMS laboratory.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trims/pipeline.hpp"

namespace {

using trims::RunConfig;

// Shorthand flags per subcommand: --<flag> sets <key>.
const std::map<std::string, std::vector<std::pair<std::string, std::string>>>& shortcuts() {
  static const std::map<std::string, std::vector<std::pair<std::string, std::string>>> m = {
      {"gen-corpus", {{"task", "corpus.task"}, {"train-size", "corpus.train_size"}, {"test-size", "corpus.test_size"}}},
      {"train-teacher", {{"epochs", "teacher.epochs"}, {"batch-size", "teacher.batch_size"}, {"lr", "teacher.lr"}}},
      {"score", {{"metric", "score.metric"}}},
      {"bucket", {{"k", "bucket.k"}, {"ordering", "bucket.ordering"}}},
      {"train",
       {{"trajectory-ratio", "train.trajectory_ratio"},
        {"p-context", "train.p_context"},
        {"p-future", "train.p_future"},
        {"epochs", "train.epochs"},
        {"batch-size", "train.batch_size"},
        {"lr", "train.lr"},
        {"loss-weighting", "train.loss_weighting"},
        {"weight-clip", "train.weight_clip"},
        {"gen-len", "train.gen_len"}}},
      {"decode",
       {{"threshold", "decode.threshold"},
        {"max-new-tokens", "decode.max_new_tokens"},
        {"max-steps", "decode.max_steps"},
        {"min-commit", "decode.min_commit"},
        {"num-examples", "decode.num_examples"}}},
      {"eval", {{"taus", "eval.taus"}, {"label", "eval.label"}, {"baseline-tps", "eval.baseline_tps"}}},
      {"analyze", {{"label", "eval.label"}}},
  };
  return m;
}

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir;
  std::string seed;
  std::map<std::string, std::string> flag_values;  // key -> raw value
};

RunConfig resolve(const Common& c) {
  RunConfig rc;
  if (!c.config_file.empty()) rc.load_file(c.config_file);
  for (const auto& s : c.sets) rc.set_assignment(s);
  for (const auto& [key, value] : c.flag_values) rc.set(key, value, "flag");
  if (!c.out_dir.empty()) rc.set("out_dir", c.out_dir, "flag");
  if (!c.seed.empty()) rc.set("seed", c.seed, "flag");
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TRIMS: trajectory-ranked masked supervision for masked diffusion LMs.\n"
               "Stages read and write files in the output directory (default $" +
               std::string(trims::kOutDirEnv) + " or ./trims_out)."};
  app.require_subcommand(1);

  struct Sub {
    std::string name;
    std::string help;
  };
  const std::vector<Sub> subs = {
      {"gen-corpus", "generate corpus_train.jsonl and corpus_test.jsonl"},
      {"train-teacher", "train the causal teacher -> teacher.ckpt"},
      {"score", "teacher difficulty scores -> scored_train.jsonl"},
      {"bucket", "quantile bucketing -> bucketed_train.jsonl"},
      {"train", "trajectory-aware student training -> student.ckpt, train_log.jsonl"},
      {"decode", "confidence-threshold decoding of the test set -> traces.jsonl"},
      {"eval", "accuracy vs TPS sweep over eval.taus -> frontier.csv"},
      {"analyze", "per-step teacher NLL of traces -> stepwise_nll.csv"},
      {"pipeline", "run every stage in order"},
      {"print-config", "print the effective configuration and where each value came from"},
  };

  std::map<std::string, Common> commons;
  std::map<std::string, std::map<std::string, std::string>> raw_flags;
  std::vector<std::string> compare_files;
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    auto& c = commons[s.name];
    sc->add_option("-c,--config", c.config_file, "flat key = value config file")->check(CLI::ExistingFile);
    sc->add_option("--set", c.sets, "override a config key (key=value), repeatable");
    sc->add_option("-o,--out-dir", c.out_dir, "output directory");
    sc->add_option("--seed", c.seed, "global seed");
    if (auto it = shortcuts().find(s.name); it != shortcuts().end()) {
      for (const auto& [flag, key] : it->second) {
        sc->add_option("--" + flag, raw_flags[s.name][key], "sets " + key + " (" + trims::find_key(key)->help + ")");
      }
    }
    if (s.name == "analyze") {
      sc->add_option("--compare", compare_files, "compare two frontier CSVs (a b) instead of analyzing traces")
          ->expected(2);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Common c = commons[name];
  for (const auto& [key, value] : raw_flags[name]) {
    if (!value.empty()) c.flag_values[key] = value;
  }

  try {
    const RunConfig rc = resolve(c);
    std::cout << std::unitbuf;  // stage progress lines appear as they happen
    std::ostream& log = std::cout;
    if (name == "print-config") {
      std::cout << rc.render(true);
    } else if (name == "gen-corpus") {
      trims::stage_gen_corpus(rc, log);
    } else if (name == "train-teacher") {
      trims::stage_train_teacher(rc, log);
    } else if (name == "score") {
      trims::stage_score(rc, log);
    } else if (name == "bucket") {
      trims::stage_bucket(rc, log);
    } else if (name == "train") {
      trims::stage_train(rc, log);
    } else if (name == "decode") {
      trims::stage_decode(rc, log);
    } else if (name == "eval") {
      trims::stage_eval(rc, log);
    } else if (name == "analyze") {
      if (!compare_files.empty()) {
        const auto cmp = trims::compare_runs(trims::read_frontier_csv(compare_files[0]),
                                             trims::read_frontier_csv(compare_files[1]));
        std::cout << "tau,accuracy_a,accuracy_b,accuracy_delta,tps_a,tps_b,tps_delta\n";
        for (const auto& d : cmp.per_tau) {
          std::cout << trims::fmt_num(d.tau) << ',' << trims::fmt_num(d.accuracy_a) << ','
                    << trims::fmt_num(d.accuracy_b) << ',' << trims::fmt_num(d.accuracy_delta()) << ','
                    << trims::fmt_num(d.tps_a) << ',' << trims::fmt_num(d.tps_b) << ','
                    << trims::fmt_num(d.tps_delta()) << '\n';
        }
        std::cout << "mean accuracy delta " << trims::fmt_num(cmp.mean_accuracy_delta) << ", mean TPS delta "
                  << trims::fmt_num(cmp.mean_tps_delta) << '\n';
      } else {
        trims::stage_analyze(rc, log);
      }
    } else if (name == "pipeline") {
      trims::stage_pipeline(rc, log);
    }
  } catch (const trims::UsageError& e) {
    std::cerr << "trims " << name << ": usage error: " << e.what() << '\n';
    return 1;
  } catch (const trims::DataError& e) {
    std::cerr << "trims " << name << ": data error: " << e.what() << '\n';
    return 2;
  } catch (const trims::NumericalError& e) {
    std::cerr << "trims " << name << ": numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "trims " << name << ": error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
