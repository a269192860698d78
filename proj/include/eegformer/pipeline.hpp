#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "eegformer/config.hpp"
#include "eegformer/dataio.hpp"
#include "eegformer/errors.hpp"
#include "eegformer/metrics.hpp"
#include "eegformer/model.hpp"
#include "eegformer/signal.hpp"
#include "eegformer/train.hpp"

namespace eegformer {

struct PreparedData {
  EpochSet train, val, test;   // standardized with train-split statistics
  EpochSet all;                // every kept epoch, same standardization
  ChannelStats stats;
  std::vector<std::string> class_names;
  std::vector<std::string> warnings;
};

// manifest -> label scheme -> load -> band-pass -> epoch -> reject ->
// split -> standardize. Unmappable labels are gathered across the whole
// manifest and reported together.
inline PreparedData prepare_data(const std::string& manifest_path, const RunConfig& cfg) {
  const Scheme scheme = parse_scheme(cfg.scheme);
  const Manifest manifest = load_manifest(manifest_path);
  if (manifest.entries.empty()) {
    throw DataError("manifest '" + manifest_path + "' lists no recordings");
  }

  std::vector<int> class_ids(manifest.entries.size());
  std::string label_failures;
  std::size_t failure_count = 0;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    try {
      class_ids[i] = label_scheme(manifest.entries[i], scheme);
    } catch (const DataError& e) {
      ++failure_count;
      label_failures += std::string("\n  ") + e.what();
    }
  }
  if (failure_count > 0) {
    throw DataError("scheme '" + cfg.scheme + "' cannot label " +
                    std::to_string(failure_count) + " manifest entries:" +
                    label_failures);
  }

  PreparedData out;
  out.class_names = scheme_class_names(scheme);
  std::vector<EpochSet> parts;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    Recording rec = load_recording(manifest.resolve_path(manifest.entries[i]));
    rec.subject_id = manifest.entries[i].subject_id;
    rec.labels = manifest.entries[i].labels;
    rec.class_id = class_ids[i];
    rec.validate();
    rec = bandpass_filter(rec, cfg.signal.low_hz, cfg.signal.high_hz);
    parts.push_back(
        epoch(rec, cfg.signal.window_samples, cfg.signal.stride_samples, &out.warnings));
  }
  EpochSet all = concat_epochs(parts);
  all.class_names = out.class_names;
  all = reject_epochs(all, cfg.signal.reject_uv, &out.warnings);
  if (all.num_epochs() == 0) {
    throw DataError("no epochs survive windowing/rejection; check window length "
                    "and reject threshold");
  }

  SplitResult sp = split(all, cfg.split);
  out.stats = compute_channel_stats(sp.train, &out.warnings);
  out.train = standardize(sp.train, out.stats);
  out.val = standardize(sp.val, out.stats);
  out.test = standardize(sp.test, out.stats);
  out.all = standardize(all, out.stats);
  return out;
}

inline void check_model_matches_data(const TransformerClassifier& model,
                                     const EpochSet& set) {
  const ModelConfig& c = model.config();
  if (set.window_samples != c.window_samples) {
    throw DataError("window mismatch: checkpoint expects " +
                    std::to_string(c.window_samples) + " samples, data provides " +
                    std::to_string(set.window_samples));
  }
  if (set.num_channels != c.num_channels) {
    throw DataError("channel mismatch: checkpoint expects " +
                    std::to_string(c.num_channels) + " channels, data provides " +
                    std::to_string(set.num_channels));
  }
}

inline EvalReport report_from_eval(const TransformerClassifier& model,
                                   const EpochSet& set, const EvalResult& r) {
  const std::size_t k = model.config().num_classes;
  Tensor probs = softmax(r.logits);
  return build_report(set.labels, probs.values(), k, set.class_names);
}

struct TrainArtifacts {
  TransformerClassifier model;
  TrainLog log;
  EvalResult test_eval;
  EvalReport test_report;
  RunConfig resolved;
  std::vector<std::string> warnings;
};

// The one training path: used by the CLI `train` command and by the
// acceptance experiments, so both exercise identical code.
inline TrainArtifacts run_training(const std::string& manifest_path, RunConfig cfg,
                                   std::ostream* progress = nullptr) {
  resolve(cfg);
  PreparedData data = prepare_data(manifest_path, cfg);
  cfg.model.num_channels = data.train.num_channels;

  TrainArtifacts art{TransformerClassifier(cfg.model), TrainLog{}, EvalResult{},
                     EvalReport{}, cfg, data.warnings};
  art.log = fit(art.model, data.train, data.val, cfg.train, progress);
  art.test_eval = evaluate(art.model, data.test, cfg.train.batch_size);
  data.test.class_names = data.class_names;
  art.test_report = report_from_eval(art.model, data.test, art.test_eval);
  return art;
}

inline void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << contents;
  if (!out) throw IoError("short write: " + path);
}

// checkpoint.eegt + trainlog.txt + test_report.txt + run_config.txt
inline void write_training_outputs(TrainArtifacts& art, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);
  const std::filesystem::path dir(out_dir);
  save_checkpoint(art.model, (dir / "checkpoint.eegt").string());
  {
    std::ostringstream os;
    write_train_log(art.log, os);
    write_text_file((dir / "trainlog.txt").string(), os.str());
  }
  {
    std::ostringstream os;
    write_report(art.test_report, os);
    write_text_file((dir / "test_report.txt").string(), os.str());
  }
  {
    std::ostringstream os;
    write_config(art.resolved, os);
    write_text_file((dir / "run_config.txt").string(), os.str());
  }
}

enum class EvalSubset { train, val, test, all };

inline EvalSubset parse_subset(const std::string& s) {
  if (s == "train") return EvalSubset::train;
  if (s == "val") return EvalSubset::val;
  if (s == "test") return EvalSubset::test;
  if (s == "all") return EvalSubset::all;
  throw ParameterError("unknown split subset '" + s + "' (train|val|test|all)");
}

struct EvalArtifacts {
  EvalResult eval;
  EvalReport report;
};

inline EvalArtifacts run_eval(const TransformerClassifier& model,
                              const std::string& manifest_path, RunConfig cfg,
                              EvalSubset which = EvalSubset::test) {
  resolve(cfg);
  PreparedData data = prepare_data(manifest_path, cfg);
  const EpochSet* set = &data.test;
  switch (which) {
    case EvalSubset::train: set = &data.train; break;
    case EvalSubset::val: set = &data.val; break;
    case EvalSubset::test: set = &data.test; break;
    case EvalSubset::all: set = &data.all; break;
  }
  check_model_matches_data(model, *set);
  EvalArtifacts out;
  out.eval = evaluate(model, *set, cfg.train.batch_size);
  EpochSet named = *set;
  named.class_names = data.class_names;
  out.report = report_from_eval(model, named, out.eval);
  return out;
}

struct FeatureArtifacts {
  Projection projection;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<std::string> warnings;
};

// Pooled pre-head features of every kept epoch, projected to 2-D.
inline FeatureArtifacts run_features(const TransformerClassifier& model,
                                     const std::string& manifest_path, RunConfig cfg) {
  resolve(cfg);
  PreparedData data = prepare_data(manifest_path, cfg);
  check_model_matches_data(model, data.all);
  const EpochSet& set = data.all;
  const std::size_t n = set.num_epochs();
  const std::size_t d = model.config().d_model;
  std::vector<double> feats(n * d);
  std::vector<int> labels;
  const std::size_t bs = cfg.train.batch_size;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t begin = 0; begin < n; begin += bs) {
    const std::size_t end = std::min(n, begin + bs);
    std::vector<int> batch_labels;
    Tensor x = detail::gather_batch(set, order, begin, end, batch_labels);
    Tensor f = model.features(x);
    std::copy(f.data(), f.data() + f.numel(), feats.data() + begin * d);
    labels.insert(labels.end(), batch_labels.begin(), batch_labels.end());
  }
  FeatureArtifacts out;
  out.labels = std::move(labels);
  out.class_names = data.class_names;
  out.projection = project_features(feats, n, d, &out.warnings);
  return out;
}

inline void write_features(const FeatureArtifacts& art, std::ostream& out) {
  out << "# x y label\n";
  char buf[100];
  for (std::size_t i = 0; i < art.projection.n; ++i) {
    std::snprintf(buf, sizeof buf, "%.12g %.12g %d\n", art.projection.points[i * 2],
                  art.projection.points[i * 2 + 1], art.labels[i]);
    out << buf;
  }
}

}  // namespace eegformer
