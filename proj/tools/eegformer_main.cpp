// Command-line front end: synthetic data generation, training, evaluation,
// and feature export over the manifest/recording formats.
//
// Exit codes: 0 success, 2 usage/config/IO, 3 data contract, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eegformer/pipeline.hpp"

namespace {

using namespace eegformer;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string scheme;
};

// defaults < env seed < config file < --scheme < --set overrides
RunConfig resolve_cli_config(const CommonOpts& opts,
                             const std::string& default_config_path = "") {
  RunConfig cfg;
  apply_env_seed(cfg);
  if (!opts.config_path.empty()) {
    load_config_file(cfg, opts.config_path);
  } else if (!default_config_path.empty() &&
             std::filesystem::exists(default_config_path)) {
    load_config_file(cfg, default_config_path);
  }
  if (!opts.scheme.empty()) apply_key(cfg, "scheme", opts.scheme);
  for (const std::string& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ParameterError("--set expects key=value, got '" + kv + "'");
    }
    apply_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

// --model accepts either a checkpoint file or a training output directory.
std::string locate_checkpoint(const std::string& model_arg) {
  if (std::filesystem::is_directory(model_arg)) {
    return (std::filesystem::path(model_arg) / "checkpoint.eegt").string();
  }
  return model_arg;
}

std::string sibling_run_config(const std::string& checkpoint_path) {
  return (std::filesystem::path(checkpoint_path).parent_path() / "run_config.txt")
      .string();
}

int cmd_synth(std::size_t classes, std::size_t subjects, double seconds,
              std::uint64_t seed, const std::string& out_dir) {
  const SynthDataset ds = synth_dataset(classes, subjects, seconds, seed);
  write_dataset(ds, out_dir);
  std::printf("wrote %zu recordings + manifest.txt to %s\n", ds.recordings.size(),
              out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& manifest, const std::string& out_dir,
              const CommonOpts& opts) {
  RunConfig cfg = resolve_cli_config(opts);
  TrainArtifacts art = run_training(manifest, cfg, &std::cout);
  for (const auto& w : art.warnings) std::cerr << "warning: " << w << "\n";
  write_training_outputs(art, out_dir);
  std::printf(
      "done: best_epoch %zu stopped_epoch %zu test_accuracy %.6g test_macro_f1 %.6g\n",
      art.log.best_epoch, art.log.stopped_epoch, art.test_report.accuracy,
      art.test_report.prf.macro_f1);
  std::printf("outputs in %s (checkpoint.eegt, trainlog.txt, test_report.txt, "
              "run_config.txt)\n",
              out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& model_arg, const std::string& manifest,
             const std::string& report_path, const std::string& subset,
             const CommonOpts& opts) {
  const std::string ckpt = locate_checkpoint(model_arg);
  TransformerClassifier model = load_checkpoint(ckpt);
  RunConfig cfg = resolve_cli_config(opts, sibling_run_config(ckpt));
  EvalArtifacts art = run_eval(model, manifest, cfg, parse_subset(subset));
  std::ostringstream os;
  write_report(art.report, os);
  write_text_file(report_path, os.str());
  std::printf("accuracy %.6g macro_f1 %.6g (report: %s)\n", art.report.accuracy,
              art.report.prf.macro_f1, report_path.c_str());
  return 0;
}

int cmd_features(const std::string& model_arg, const std::string& manifest,
                 const std::string& out_path, const CommonOpts& opts) {
  const std::string ckpt = locate_checkpoint(model_arg);
  TransformerClassifier model = load_checkpoint(ckpt);
  RunConfig cfg = resolve_cli_config(opts, sibling_run_config(ckpt));
  FeatureArtifacts art = run_features(model, manifest, cfg);
  for (const auto& w : art.warnings) std::cerr << "warning: " << w << "\n";
  std::ostringstream os;
  write_features(art, os);
  write_text_file(out_path, os.str());
  std::printf("wrote %zu projected feature rows to %s\n", art.projection.n,
              out_path.c_str());
  return 0;
}

void add_common(CLI::App* sub, CommonOpts& opts) {
  sub->add_option("--config", opts.config_path, "config file of key = value lines");
  sub->add_option("--set", opts.sets, "override one config key, e.g. --set train.lr=0.01")
      ->take_all();
  sub->add_option("--scheme", opts.scheme, "label scheme: gender|age6|load2|load3");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG transformer classification pipeline"};
  app.require_subcommand(1);

  // synth
  std::size_t classes = 2, subjects = 10;
  double seconds = 30.0;
  std::uint64_t seed = 7;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--classes", classes, "number of classes (2, 3 or 6)");
  synth->add_option("--subjects", subjects, "subjects per class");
  synth->add_option("--seconds", seconds, "seconds of signal per subject");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  std::string train_data, train_out = "run_out";
  CommonOpts train_opts;
  CLI::App* train = app.add_subcommand("train", "train a classifier from a manifest");
  train->add_option("--data", train_data, "manifest file")->required();
  train->add_option("--out", train_out, "output directory");
  add_common(train, train_opts);

  // eval
  std::string eval_model, eval_data, eval_report = "eval_report.txt",
              eval_subset = "test";
  CommonOpts eval_opts;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--model", eval_model, "checkpoint file or training output dir")
      ->required();
  eval->add_option("--data", eval_data, "manifest file")->required();
  eval->add_option("--report", eval_report, "report output path");
  eval->add_option("--split", eval_subset, "subset to score: train|val|test|all");
  add_common(eval, eval_opts);

  // features
  std::string feat_model, feat_data, feat_out = "features.txt";
  CommonOpts feat_opts;
  CLI::App* features = app.add_subcommand("features", "export 2-D projected features");
  features->add_option("--model", feat_model, "checkpoint file or training output dir")
      ->required();
  features->add_option("--data", feat_data, "manifest file")->required();
  features->add_option("--out", feat_out, "output table path");
  add_common(features, feat_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0; any parse problem is usage
  }

  try {
    if (synth->parsed()) return cmd_synth(classes, subjects, seconds, seed, synth_out);
    if (train->parsed()) return cmd_train(train_data, train_out, train_opts);
    if (eval->parsed()) {
      return cmd_eval(eval_model, eval_data, eval_report, eval_subset, eval_opts);
    }
    if (features->parsed()) {
      return cmd_features(feat_model, feat_data, feat_out, feat_opts);
    }
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {  // ParameterError, IoError, FormatError, CheckpointError
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
