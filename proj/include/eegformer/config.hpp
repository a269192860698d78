#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <string>

#include "eegformer/dataio.hpp"
#include "eegformer/errors.hpp"
#include "eegformer/model.hpp"
#include "eegformer/train.hpp"

namespace eegformer {

struct SignalConfig {
  double low_hz = 1.0;
  double high_hz = 40.0;
  std::size_t window_samples = 256;   // 2 s at 128 Hz
  std::size_t stride_samples = 128;   // 50% overlap
  double reject_uv = 200.0;           // peak-to-peak threshold
};

// Union of every knob a run needs. Defaults < config file < explicit
// overrides; the EEGFORMER_SEED environment variable replaces the default
// seed only.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string scheme = "load2";
  SplitSpec split;
  SignalConfig signal;
  ModelConfig model;
  TrainConfig train;

  // which seeds/heads were set explicitly (resolve() fills the rest)
  bool split_seed_set = false;
  bool model_seed_set = false;
  bool train_seed_set = false;
  bool num_heads_set = false;
};

namespace detail {

inline double parse_num(const std::string& key, const std::string& v) {
  double out;
  if (!parse_double(v, out)) {
    throw ParameterError("config: key '" + key + "' needs a number, got '" + v + "'");
  }
  return out;
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  const double d = parse_num(key, v);
  if (d < 0 || d != std::floor(d)) {
    throw ParameterError("config: key '" + key + "' needs a non-negative integer, got '" +
                         v + "'");
  }
  return static_cast<std::size_t>(d);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParameterError("config: key '" + key + "' needs true|false, got '" + v + "'");
}

inline std::string fmt_cfg_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_num;
  using detail::parse_size;
  if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_size(key, value));
  } else if (key == "scheme") {
    parse_scheme(value);  // validates
    cfg.scheme = value;
  } else if (key == "split.train_frac") {
    cfg.split.train_frac = parse_num(key, value);
  } else if (key == "split.val_frac") {
    cfg.split.val_frac = parse_num(key, value);
  } else if (key == "split.test_frac") {
    cfg.split.test_frac = parse_num(key, value);
  } else if (key == "split.mode") {
    cfg.split.mode = parse_split_mode(value);
  } else if (key == "split.seed") {
    cfg.split.seed = parse_size(key, value);
    cfg.split_seed_set = true;
  } else if (key == "signal.low_hz") {
    cfg.signal.low_hz = parse_num(key, value);
  } else if (key == "signal.high_hz") {
    cfg.signal.high_hz = parse_num(key, value);
  } else if (key == "signal.window_samples") {
    cfg.signal.window_samples = parse_size(key, value);
  } else if (key == "signal.stride_samples") {
    cfg.signal.stride_samples = parse_size(key, value);
  } else if (key == "signal.reject_uv") {
    if (value == "inf") {
      cfg.signal.reject_uv = std::numeric_limits<double>::infinity();
    } else {
      cfg.signal.reject_uv = parse_num(key, value);
    }
  } else if (key == "model.d_model") {
    cfg.model.d_model = parse_size(key, value);
  } else if (key == "model.num_heads") {
    cfg.model.num_heads = parse_size(key, value);
    cfg.num_heads_set = true;
  } else if (key == "model.d_ff") {
    cfg.model.d_ff = parse_size(key, value);
  } else if (key == "model.num_encoders") {
    cfg.model.num_encoders = parse_size(key, value);
  } else if (key == "model.dropout_p") {
    cfg.model.dropout_p = parse_num(key, value);
  } else if (key == "model.seed") {
    cfg.model.seed = parse_size(key, value);
    cfg.model_seed_set = true;
  } else if (key == "train.batch_size") {
    cfg.train.batch_size = parse_size(key, value);
  } else if (key == "train.max_epochs") {
    cfg.train.max_epochs = parse_size(key, value);
  } else if (key == "train.patience") {
    cfg.train.patience = parse_size(key, value);
  } else if (key == "train.lr") {
    cfg.train.lr = parse_num(key, value);
  } else if (key == "train.beta1") {
    cfg.train.beta1 = parse_num(key, value);
  } else if (key == "train.beta2") {
    cfg.train.beta2 = parse_num(key, value);
  } else if (key == "train.eps") {
    cfg.train.eps = parse_num(key, value);
  } else if (key == "train.seed") {
    cfg.train.seed = parse_size(key, value);
    cfg.train_seed_set = true;
  } else if (key == "train.shuffle") {
    cfg.train.shuffle = parse_bool(key, value);
  } else {
    throw ParameterError("config: unknown key '" + key + "'");
  }
}

// `key = value` per line; # starts a comment.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char c : line) blank &= std::isspace(static_cast<unsigned char>(c)) != 0;
      if (blank) continue;
      throw FormatError(path + ": expected 'key = value'", line_no);
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw FormatError(path + ": expected 'key = value'", line_no);
    }
    try {
      apply_key(cfg, key, value);
    } catch (const ParameterError& e) {
      throw FormatError(path + ": " + e.what(), line_no);
    }
  }
}

// Applies the default-seed fallback from the environment. Call before
// loading files/flags so explicit settings still win.
inline void apply_env_seed(RunConfig& cfg) {
  const char* env = std::getenv("EEGFORMER_SEED");
  if (env == nullptr || *env == '\0') return;
  double v;
  if (!detail::parse_double(env, v) || v < 0 || v != std::floor(v)) {
    throw ParameterError("EEGFORMER_SEED must be a non-negative integer, got '" +
                         std::string(env) + "'");
  }
  cfg.seed = static_cast<std::uint64_t>(v);
}

// Fills every derived field: class count from the scheme, head count by
// scheme unless overridden, per-module seeds from the global seed, and the
// model window from the signal window.
inline void resolve(RunConfig& cfg) {
  const Scheme scheme = parse_scheme(cfg.scheme);
  cfg.model.num_classes = scheme_num_classes(scheme);
  if (!cfg.num_heads_set) {
    cfg.model.num_heads = scheme == Scheme::age6 ? 8 : 4;
  }
  if (!cfg.split_seed_set) cfg.split.seed = cfg.seed;
  if (!cfg.model_seed_set) cfg.model.seed = cfg.seed + 1;
  if (!cfg.train_seed_set) cfg.train.seed = cfg.seed + 2;
  cfg.model.window_samples = cfg.signal.window_samples;
  cfg.split.validate();
  cfg.train.validate();
  cfg.model.validate();
  if (!(cfg.signal.low_hz > 0) || !(cfg.signal.low_hz < cfg.signal.high_hz)) {
    throw ParameterError("config: need 0 < signal.low_hz < signal.high_hz");
  }
  if (cfg.signal.window_samples == 0 || cfg.signal.stride_samples == 0) {
    throw ParameterError("config: window/stride must be positive");
  }
  if (!(cfg.signal.reject_uv > 0)) {
    throw ParameterError("config: signal.reject_uv must be positive (use inf to disable)");
  }
}

// Every resolved key, fixed order, full double precision; reloading this
// file reproduces the run.
inline void write_config(const RunConfig& cfg, std::ostream& out) {
  using detail::fmt_cfg_double;
  out << "# resolved run configuration\n";
  out << "seed = " << cfg.seed << "\n";
  out << "scheme = " << cfg.scheme << "\n";
  out << "split.mode = "
      << (cfg.split.mode == SplitSpec::Mode::epoch_level ? "epoch" : "subject") << "\n";
  out << "split.train_frac = " << fmt_cfg_double(cfg.split.train_frac) << "\n";
  out << "split.val_frac = " << fmt_cfg_double(cfg.split.val_frac) << "\n";
  out << "split.test_frac = " << fmt_cfg_double(cfg.split.test_frac) << "\n";
  out << "split.seed = " << cfg.split.seed << "\n";
  out << "signal.low_hz = " << fmt_cfg_double(cfg.signal.low_hz) << "\n";
  out << "signal.high_hz = " << fmt_cfg_double(cfg.signal.high_hz) << "\n";
  out << "signal.window_samples = " << cfg.signal.window_samples << "\n";
  out << "signal.stride_samples = " << cfg.signal.stride_samples << "\n";
  if (std::isinf(cfg.signal.reject_uv)) {
    out << "signal.reject_uv = inf\n";
  } else {
    out << "signal.reject_uv = " << fmt_cfg_double(cfg.signal.reject_uv) << "\n";
  }
  out << "model.d_model = " << cfg.model.d_model << "\n";
  out << "model.num_heads = " << cfg.model.num_heads << "\n";
  out << "model.d_ff = " << cfg.model.d_ff << "\n";
  out << "model.num_encoders = " << cfg.model.num_encoders << "\n";
  out << "model.dropout_p = " << fmt_cfg_double(cfg.model.dropout_p) << "\n";
  out << "model.seed = " << cfg.model.seed << "\n";
  out << "train.batch_size = " << cfg.train.batch_size << "\n";
  out << "train.max_epochs = " << cfg.train.max_epochs << "\n";
  out << "train.patience = " << cfg.train.patience << "\n";
  out << "train.lr = " << fmt_cfg_double(cfg.train.lr) << "\n";
  out << "train.beta1 = " << fmt_cfg_double(cfg.train.beta1) << "\n";
  out << "train.beta2 = " << fmt_cfg_double(cfg.train.beta2) << "\n";
  out << "train.eps = " << fmt_cfg_double(cfg.train.eps) << "\n";
  out << "train.seed = " << cfg.train.seed << "\n";
  out << "train.shuffle = " << (cfg.train.shuffle ? "true" : "false") << "\n";
}

}  // namespace eegformer
