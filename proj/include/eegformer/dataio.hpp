#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eegformer/errors.hpp"
#include "eegformer/rng.hpp"
#include "eegformer/signal.hpp"

namespace eegformer {

// ---------------------------------------------------------------------------
// Recording files: UTF-8 text, one row per sample, whitespace- or
// comma-separated, optional first header row of channel names.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* begin = s.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + s.size() && !s.empty();
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

inline Recording load_recording(const std::string& path,
                                std::size_t expected_channels = 14,
                                double sample_rate_hz = 128.0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open recording file: " + path);

  Recording rec;
  rec.sample_rate_hz = sample_rate_hz;
  std::string line;
  long line_no = 0;
  bool saw_header = false;
  bool first_content = true;
  std::size_t cols = expected_channels;

  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;

    if (first_content) {
      first_content = false;
      // a row that fails to parse as numbers is a channel-name header
      double probe;
      bool numeric = true;
      for (const auto& f : fields) {
        if (!detail::parse_double(f, probe)) {
          numeric = false;
          break;
        }
      }
      if (!numeric) {
        saw_header = true;
        cols = fields.size();
        rec.channel_names = fields;
        rec.num_channels = cols;
        continue;
      }
      if (!saw_header) {
        rec.num_channels = expected_channels;
        rec.channel_names = expected_channels == 14
                                ? stew_channel_names()
                                : std::vector<std::string>(expected_channels, "");
        if (expected_channels != 14) {
          for (std::size_t i = 0; i < expected_channels; ++i) {
            rec.channel_names[i] = "ch" + std::to_string(i);
          }
        }
      }
    }

    if (fields.size() != cols) {
      throw FormatError(path + ": row has " + std::to_string(fields.size()) +
                            " values, expected " + std::to_string(cols),
                        line_no);
    }
    for (const auto& f : fields) {
      double v;
      if (!detail::parse_double(f, v)) {
        throw FormatError(path + ": non-numeric value '" + f + "'", line_no);
      }
      if (!std::isfinite(v)) {
        throw FormatError(path + ": non-finite value '" + f + "'", line_no);
      }
      rec.samples.push_back(v);
    }
  }
  if (rec.samples.empty()) {
    throw FormatError(path + (line_no == 0 ? ": empty file" : ": no data rows"));
  }
  return rec;
}

inline void write_recording(const Recording& rec, const std::string& path,
                            bool with_header = false) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write recording file: " + path);
  const std::size_t n = rec.num_samples(), c = rec.num_channels;
  if (with_header) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (ch) out << ' ';
      out << rec.channel_names[ch];
    }
    out << '\n';
  }
  std::string row;
  for (std::size_t t = 0; t < n; ++t) {
    row.clear();
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (ch) row.push_back(' ');
      row += detail::fmt_double(rec.samples[t * c + ch]);
    }
    row.push_back('\n');
    out << row;
  }
  if (!out) throw IoError("short write to recording file: " + path);
}

// ---------------------------------------------------------------------------
// Manifest: one record per line -- path, subject_id, gender, age_years,
// segment, rating -- with `-` for absent fields. `#` starts a comment.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string file_path;
  std::string subject_id;
  LabelFields labels;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::string base_dir;  // directory of the manifest file; paths resolve against it

  std::string resolve_path(const ManifestEntry& e) const {
    std::filesystem::path p(e.file_path);
    if (p.is_absolute() || base_dir.empty()) return e.file_path;
    return (std::filesystem::path(base_dir) / p).string();
  }
};

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  Manifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  long line_no = 0;
  std::map<std::string, long> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    if (fields.size() != 6) {
      throw FormatError(path + ": manifest record needs 6 fields "
                               "(path subject gender age segment rating), got " +
                            std::to_string(fields.size()),
                        line_no);
    }
    ManifestEntry e;
    e.file_path = fields[0];
    e.subject_id = fields[1];
    if (fields[2] != "-") e.labels.gender = fields[2];
    if (fields[3] != "-") {
      double v;
      if (!detail::parse_double(fields[3], v) || v != std::floor(v) || v < 0) {
        throw FormatError(path + ": bad age_years '" + fields[3] + "'", line_no);
      }
      e.labels.age_years = static_cast<int>(v);
    }
    if (fields[4] != "-") {
      if (fields[4] != "rest" && fields[4] != "simkap") {
        throw FormatError(path + ": segment must be rest|simkap|-, got '" +
                              fields[4] + "'",
                          line_no);
      }
      e.labels.segment = fields[4];
    }
    if (fields[5] != "-") {
      double v;
      if (!detail::parse_double(fields[5], v) || v != std::floor(v) || v < 1 || v > 9) {
        throw FormatError(path + ": workload rating must be 1-9 or '-', got '" +
                              fields[5] + "'",
                          line_no);
      }
      e.labels.workload_rating = static_cast<int>(v);
    }
    const auto [it, inserted] = seen.emplace(e.file_path, line_no);
    if (!inserted) {
      throw FormatError(path + ": duplicate file path '" + e.file_path +
                            "' (first at line " + std::to_string(it->second) + ")",
                        line_no);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << "# path subject gender age segment rating\n";
  for (const auto& e : m.entries) {
    out << e.file_path << ' ' << e.subject_id << ' '
        << (e.labels.gender.empty() ? "-" : e.labels.gender) << ' ';
    if (e.labels.age_years >= 0) {
      out << e.labels.age_years;
    } else {
      out << '-';
    }
    out << ' ' << (e.labels.segment.empty() ? "-" : e.labels.segment) << ' ';
    if (e.labels.workload_rating >= 1) {
      out << e.labels.workload_rating;
    } else {
      out << '-';
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Label schemes
// ---------------------------------------------------------------------------

enum class Scheme { gender, age6, load2, load3 };

inline Scheme parse_scheme(const std::string& s) {
  if (s == "gender") return Scheme::gender;
  if (s == "age6") return Scheme::age6;
  if (s == "load2") return Scheme::load2;
  if (s == "load3") return Scheme::load3;
  throw ParameterError("unknown scheme '" + s + "' (gender|age6|load2|load3)");
}

inline std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::gender: return "gender";
    case Scheme::age6: return "age6";
    case Scheme::load2: return "load2";
    case Scheme::load3: return "load3";
  }
  return "?";
}

inline std::size_t scheme_num_classes(Scheme s) {
  switch (s) {
    case Scheme::gender: return 2;
    case Scheme::age6: return 6;
    case Scheme::load2: return 2;
    case Scheme::load3: return 3;
  }
  return 0;
}

inline std::vector<std::string> scheme_class_names(Scheme s) {
  switch (s) {
    case Scheme::gender: return {"male", "female"};
    case Scheme::age6: return {"6-11", "12-16", "18-24", "25-30", "33-39", "42-56"};
    case Scheme::load2: return {"rest", "simkap"};
    case Scheme::load3: return {"low", "moderate", "high"};
  }
  return {};
}

// Maps one manifest entry onto a class id under the given scheme. Ages
// falling in the gaps between the published brackets are a hard error.
inline int label_scheme(const ManifestEntry& e, Scheme scheme) {
  switch (scheme) {
    case Scheme::gender: {
      const std::string& g = e.labels.gender;
      if (g == "male" || g == "m") return 0;
      if (g == "female" || g == "f") return 1;
      throw DataError("entry '" + e.file_path + "': gender must be male|female, got '" +
                      g + "'");
    }
    case Scheme::age6: {
      const int a = e.labels.age_years;
      if (a < 0) throw DataError("entry '" + e.file_path + "': age_years missing");
      static constexpr int lo[6] = {6, 12, 18, 25, 33, 42};
      static constexpr int hi[6] = {11, 16, 24, 30, 39, 56};
      for (int k = 0; k < 6; ++k) {
        if (a >= lo[k] && a <= hi[k]) return k;
      }
      throw DataError("entry '" + e.file_path + "': age " + std::to_string(a) +
                      " falls outside every bracket "
                      "(6-11, 12-16, 18-24, 25-30, 33-39, 42-56)");
    }
    case Scheme::load2: {
      const std::string& s = e.labels.segment;
      if (s == "rest") return 0;
      if (s == "simkap") return 1;
      throw DataError("entry '" + e.file_path + "': segment must be rest|simkap, got '" +
                      s + "'");
    }
    case Scheme::load3: {
      const int r = e.labels.workload_rating;
      if (r < 1) {
        throw DataError("entry '" + e.file_path + "': workload rating missing (load3 "
                        "maps 1-3 low, 4-6 moderate, 7-9 high)");
      }
      if (r <= 3) return 0;
      if (r <= 6) return 1;
      return 2;
    }
  }
  throw ContractError("label_scheme: bad scheme");
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train_frac = 0.70;
  double val_frac = 0.15;
  double test_frac = 0.15;
  std::uint64_t seed = 42;
  enum class Mode { epoch_level, subject_level } mode = Mode::epoch_level;

  void validate() const {
    if (train_frac <= 0 || val_frac <= 0 || test_frac <= 0) {
      throw ParameterError("split: all fractions must be positive");
    }
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
      throw ParameterError("split: fractions must sum to 1");
    }
  }
};

inline SplitSpec::Mode parse_split_mode(const std::string& s) {
  if (s == "epoch" || s == "epoch_level") return SplitSpec::Mode::epoch_level;
  if (s == "subject" || s == "subject_level") return SplitSpec::Mode::subject_level;
  throw ParameterError("unknown split mode '" + s + "' (epoch|subject)");
}

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Epoch-level: shuffle epochs by seed and cut; sizes are floor-based with
// the remainder going to train. Subject-level: whole subjects are assigned
// to parts so no subject spans two parts.
inline SplitIndices split_indices(const EpochSet& set, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = set.num_epochs();
  const std::size_t n_val = static_cast<std::size_t>(std::floor(n * spec.val_frac));
  const std::size_t n_test = static_cast<std::size_t>(std::floor(n * spec.test_frac));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
    throw DataError("split: " + std::to_string(n) +
                    " epochs are too few for a " + std::to_string(spec.train_frac) +
                    "/" + std::to_string(spec.val_frac) + "/" +
                    std::to_string(spec.test_frac) + " split");
  }
  const std::size_t n_train = n - n_val - n_test;

  SplitIndices out;
  Rng rng(spec.seed);
  if (spec.mode == SplitSpec::Mode::epoch_level) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    out.train.assign(idx.begin(), idx.begin() + n_train);
    out.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    out.test.assign(idx.begin() + n_train + n_val, idx.end());
    return out;
  }

  // subject-level
  std::vector<std::string> subjects;
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = by_subject.emplace(set.group_ids[i], std::vector<std::size_t>{});
    if (inserted) subjects.push_back(set.group_ids[i]);
    it->second.push_back(i);
  }
  if (subjects.size() < 3) {
    throw DataError("split: subject-level mode needs at least 3 subjects, got " +
                    std::to_string(subjects.size()));
  }
  rng.shuffle(subjects);
  const double targets[3] = {spec.train_frac * n, spec.val_frac * n, spec.test_frac * n};
  double counts[3] = {0, 0, 0};
  std::vector<std::size_t>* parts[3] = {&out.train, &out.val, &out.test};
  for (const auto& s : subjects) {
    // most-underfilled part, ties resolved train > val > test
    int best = 0;
    double best_deficit = targets[0] - counts[0];
    for (int p = 1; p < 3; ++p) {
      const double deficit = targets[p] - counts[p];
      if (deficit > best_deficit) {
        best = p;
        best_deficit = deficit;
      }
    }
    const auto& idx = by_subject[s];
    parts[best]->insert(parts[best]->end(), idx.begin(), idx.end());
    counts[best] += static_cast<double>(idx.size());
  }
  if (out.train.empty() || out.val.empty() || out.test.empty()) {
    throw DataError("split: subject-level assignment left an empty part");
  }
  for (auto* part : parts) std::sort(part->begin(), part->end());
  return out;
}

inline EpochSet subset(const EpochSet& set, const std::vector<std::size_t>& indices) {
  EpochSet out;
  out.window_samples = set.window_samples;
  out.num_channels = set.num_channels;
  out.class_names = set.class_names;
  out.data.reserve(indices.size() * set.epoch_size());
  for (std::size_t i : indices) {
    const double* d = set.epoch_data(i);
    out.data.insert(out.data.end(), d, d + set.epoch_size());
    out.labels.push_back(set.labels[i]);
    out.group_ids.push_back(set.group_ids[i]);
  }
  return out;
}

struct SplitResult {
  EpochSet train, val, test;
  SplitIndices indices;
};

inline SplitResult split(const EpochSet& set, const SplitSpec& spec) {
  SplitResult r;
  r.indices = split_indices(set, spec);
  r.train = subset(set, r.indices.train);
  r.val = subset(set, r.indices.val);
  r.test = subset(set, r.indices.test);
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic data: base 1/f noise plus a class-specific sinusoid at
// 6 + 4k Hz with per-channel phase jitter. Deterministic per seed.
// ---------------------------------------------------------------------------

struct SynthDataset {
  Manifest manifest;
  std::vector<Recording> recordings;  // aligned with manifest.entries
};

namespace detail {

// Paul Kellet's economy pink-noise filter over a white source.
inline std::vector<double> pink_noise(Rng& rng, std::size_t n) {
  std::vector<double> out(n);
  double b0 = 0, b1 = 0, b2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.normal();
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    out[i] = b0 + b1 + b2 + w * 0.1848;
  }
  return out;
}

}  // namespace detail

inline SynthDataset synth_dataset(std::size_t num_classes, std::size_t subjects_per_class,
                                  double seconds_per_subject, std::uint64_t seed) {
  if (num_classes != 2 && num_classes != 3 && num_classes != 6) {
    throw ParameterError("synth_dataset: num_classes must be 2, 3 or 6, got " +
                         std::to_string(num_classes));
  }
  if (subjects_per_class == 0) {
    throw ParameterError("synth_dataset: subjects_per_class must be positive");
  }
  if (!(seconds_per_subject > 0)) {
    throw ParameterError("synth_dataset: seconds_per_subject must be positive");
  }
  constexpr double kFs = 128.0;
  constexpr std::size_t kChannels = 14;
  constexpr double kNoiseStd = 15.0;  // microvolts
  constexpr double kToneAmp = 60.0;   // microvolts
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  static constexpr int kAgesByClass[6] = {8, 14, 20, 27, 35, 50};

  SynthDataset ds;
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(std::llround(seconds_per_subject * kFs));
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double tone_hz = 6.0 + 4.0 * static_cast<double>(k);
    for (std::size_t s = 0; s < subjects_per_class; ++s) {
      char sid[32];
      std::snprintf(sid, sizeof sid, "c%zus%02zu", k, s);

      Recording rec;
      rec.subject_id = sid;
      rec.num_channels = kChannels;
      rec.sample_rate_hz = kFs;
      rec.samples.assign(n * kChannels, 0.0);
      rec.class_id = static_cast<int>(k);

      const double subject_phase = rng.uniform(0.0, kTwoPi);
      for (std::size_t ch = 0; ch < kChannels; ++ch) {
        std::vector<double> noise = detail::pink_noise(rng, n);
        double mu = 0;
        for (double v : noise) mu += v;
        mu /= static_cast<double>(n);
        double var = 0;
        for (double v : noise) var += (v - mu) * (v - mu);
        const double sd = std::sqrt(var / static_cast<double>(n));
        const double gain = sd > 0 ? kNoiseStd / sd : 0.0;
        const double phase = subject_phase + rng.uniform(-0.5, 0.5);
        for (std::size_t t = 0; t < n; ++t) {
          rec.samples[t * kChannels + ch] =
              gain * (noise[t] - mu) +
              kToneAmp * std::sin(kTwoPi * tone_hz * t / kFs + phase);
        }
      }

      ManifestEntry e;
      e.file_path = std::string("rec_") + sid + ".txt";
      e.subject_id = sid;
      if (num_classes == 2) {
        e.labels.gender = k == 0 ? "male" : "female";
        e.labels.age_years = 20;
        e.labels.segment = k == 0 ? "rest" : "simkap";
        e.labels.workload_rating = k == 0 ? 2 : 8;
      } else if (num_classes == 3) {
        e.labels.gender = s % 2 == 0 ? "male" : "female";
        e.labels.age_years = 20;
        e.labels.segment = "simkap";
        e.labels.workload_rating = k == 0 ? 2 : (k == 1 ? 5 : 8);
      } else {
        e.labels.gender = s % 2 == 0 ? "male" : "female";
        e.labels.age_years = kAgesByClass[k];
        e.labels.segment = "rest";
        e.labels.workload_rating = -1;
      }
      ds.manifest.entries.push_back(std::move(e));
      ds.recordings.push_back(std::move(rec));
    }
  }
  return ds;
}

// Writes recording files plus manifest.txt into `dir`; returns the manifest path.
inline std::string write_dataset(const SynthDataset& ds, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir);
  for (std::size_t i = 0; i < ds.recordings.size(); ++i) {
    const auto path = std::filesystem::path(dir) / ds.manifest.entries[i].file_path;
    write_recording(ds.recordings[i], path.string());
  }
  const auto mpath = (std::filesystem::path(dir) / "manifest.txt").string();
  write_manifest(ds.manifest, mpath);
  return mpath;
}

}  // namespace eegformer
