#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "eegformer/errors.hpp"

namespace eegformer {

inline const std::vector<std::string>& stew_channel_names() {
  static const std::vector<std::string> names = {"AF3", "F7", "F3",  "FC5", "T7",
                                                 "P7",  "O1", "O2",  "P8",  "T8",
                                                 "FC6", "F4", "F8",  "AF4"};
  return names;
}

// Per-recording metadata as it appears in a manifest. Absent numeric fields
// are -1, absent strings empty.
struct LabelFields {
  std::string gender;
  int age_years = -1;
  std::string segment;  // "rest" or "simkap"
  int workload_rating = -1;
};

// One subject-session of multichannel EEG at a fixed sample rate, in
// microvolts, laid out (sample, channel) row-major.
struct Recording {
  std::vector<double> samples;
  std::size_t num_channels = 14;
  double sample_rate_hz = 128.0;
  std::vector<std::string> channel_names = stew_channel_names();
  std::string subject_id;
  LabelFields labels;
  int class_id = 0;  // assigned once a label scheme has been applied

  std::size_t num_samples() const {
    return num_channels == 0 ? 0 : samples.size() / num_channels;
  }

  void validate() const {
    if (sample_rate_hz <= 0.0) {
      throw ParameterError("recording: sample rate must be positive");
    }
    if (num_channels != channel_names.size()) {
      throw DimensionError("recording: " + std::to_string(num_channels) +
                           " channels but " + std::to_string(channel_names.size()) +
                           " channel names");
    }
    if (samples.size() % num_channels != 0) {
      throw DimensionError("recording: sample buffer is not a whole number of rows");
    }
    for (double v : samples) {
      if (!std::isfinite(v)) {
        throw NumericError("recording: non-finite sample value");
      }
    }
  }
};

// Windowed labeled examples, (epoch, sample, channel) row-major.
struct EpochSet {
  std::size_t window_samples = 0;
  std::size_t num_channels = 0;
  std::vector<double> data;
  std::vector<int> labels;
  std::vector<std::string> group_ids;      // subject id per epoch
  std::vector<std::string> class_names;

  std::size_t num_epochs() const { return labels.size(); }
  std::size_t epoch_size() const { return window_samples * num_channels; }
  const double* epoch_data(std::size_t i) const { return data.data() + i * epoch_size(); }

  void validate() const {
    if (labels.size() != group_ids.size()) {
      throw DimensionError("epoch set: labels/group_ids length mismatch");
    }
    if (data.size() != num_epochs() * epoch_size()) {
      throw DimensionError("epoch set: data size disagrees with epoch count");
    }
  }
};

inline EpochSet concat_epochs(const std::vector<EpochSet>& parts) {
  EpochSet out;
  for (const EpochSet& p : parts) {
    if (p.num_epochs() == 0) continue;
    if (out.num_epochs() == 0) {
      out.window_samples = p.window_samples;
      out.num_channels = p.num_channels;
      out.class_names = p.class_names;
    } else if (p.window_samples != out.window_samples ||
               p.num_channels != out.num_channels) {
      throw DimensionError("concat_epochs: incompatible window/channel shapes");
    }
    out.data.insert(out.data.end(), p.data.begin(), p.data.end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.group_ids.insert(out.group_ids.end(), p.group_ids.begin(), p.group_ids.end());
  }
  return out;
}

namespace detail {

struct Biquad {
  double b0, b1, b2;  // numerator
  double a1, a2;      // denominator (a0 normalized to 1)
};

// 4-pole Butterworth band-pass (order-2 lowpass prototype through the
// standard bandpass transform, bilinear-discretized with prewarping),
// returned as two normalized biquad sections.
inline std::vector<Biquad> butter_bandpass_sections(double low_hz, double high_hz,
                                                    double fs) {
  const double pi = 3.14159265358979323846;
  const double w1 = std::tan(pi * low_hz / fs);
  const double w2 = std::tan(pi * high_hz / fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // Prototype poles for n = 2: exp(j*3pi/4) and its conjugate.
  const std::complex<double> proto(-std::sqrt(0.5), std::sqrt(0.5));

  // Bandpass transform: each prototype pole p yields the roots of
  // s^2 - (bw*p) s + w0^2 = 0. Their conjugates come from conj(p).
  const std::complex<double> bp = bw * proto;
  const std::complex<double> disc = std::sqrt(bp * bp - 4.0 * w0sq);
  const std::complex<double> s_poles[2] = {(bp + disc) / 2.0, (bp - disc) / 2.0};

  std::vector<Biquad> sections;
  for (const auto& s : s_poles) {
    const std::complex<double> zp = (1.0 + s) / (1.0 - s);  // bilinear, T = 2
    Biquad q;
    q.a1 = -2.0 * zp.real();
    q.a2 = std::norm(zp);
    // one zero at z=+1 and one at z=-1 per section: (1 - z^-2)
    q.b0 = 1.0;
    q.b1 = 0.0;
    q.b2 = -1.0;
    sections.push_back(q);
  }

  // Normalize each section to unit gain at the center frequency.
  const double wc = 2.0 * std::atan(std::sqrt(w0sq));
  const std::complex<double> z = std::polar(1.0, wc);
  const std::complex<double> zi = 1.0 / z;
  for (Biquad& q : sections) {
    const std::complex<double> num = q.b0 + q.b1 * zi + q.b2 * zi * zi;
    const std::complex<double> den = 1.0 + q.a1 * zi + q.a2 * zi * zi;
    const double g = std::abs(num / den);
    q.b0 /= g;
    q.b1 /= g;
    q.b2 /= g;
  }
  return sections;
}

inline void biquad_forward(const Biquad& q, std::vector<double>& x) {
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (double& v : x) {
    const double x0 = v;
    const double y0 = q.b0 * x0 + q.b1 * x1 + q.b2 * x2 - q.a1 * y1 - q.a2 * y2;
    x2 = x1;
    x1 = x0;
    y2 = y1;
    y1 = y0;
    v = y0;
  }
}

// Forward-backward filtering of one channel with odd-reflection padding at
// both ends, so the net phase response is zero.
inline void filtfilt_channel(const std::vector<Biquad>& sections,
                             std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n == 0) return;
  const std::size_t pad = std::min<std::size_t>(n - 1, 3 * (2 * sections.size() + 1));

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  for (const Biquad& q : sections) biquad_forward(q, ext);
  std::reverse(ext.begin(), ext.end());
  for (const Biquad& q : sections) biquad_forward(q, ext);
  std::reverse(ext.begin(), ext.end());

  std::copy(ext.begin() + pad, ext.begin() + pad + n, x.begin());
}

}  // namespace detail

// Zero-phase 4-pole Butterworth band-pass applied per channel. Output length
// equals input length.
inline Recording bandpass_filter(const Recording& rec, double low_hz, double high_hz) {
  if (!(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < rec.sample_rate_hz / 2.0)) {
    throw ParameterError("bandpass_filter: need 0 < low (" + std::to_string(low_hz) +
                         ") < high (" + std::to_string(high_hz) + ") < Nyquist (" +
                         std::to_string(rec.sample_rate_hz / 2.0) + ")");
  }
  const auto sections =
      detail::butter_bandpass_sections(low_hz, high_hz, rec.sample_rate_hz);
  Recording out = rec;
  const std::size_t n = rec.num_samples();
  const std::size_t c = rec.num_channels;
  std::vector<double> chan(n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t t = 0; t < n; ++t) chan[t] = rec.samples[t * c + ch];
    detail::filtfilt_channel(sections, chan);
    for (std::size_t t = 0; t < n; ++t) out.samples[t * c + ch] = chan[t];
  }
  return out;
}

// Cuts a recording into overlapping windows. Yields
// floor((num_samples - window) / stride) + 1 epochs, each carrying the
// recording's class id and subject id. A window longer than the recording
// produces an empty set plus a warning, not an error.
inline EpochSet epoch(const Recording& rec, std::size_t window_samples,
                      std::size_t stride_samples,
                      std::vector<std::string>* warnings = nullptr) {
  if (window_samples == 0) throw ParameterError("epoch: window must be positive");
  if (stride_samples == 0) throw ParameterError("epoch: stride must be positive");
  EpochSet set;
  set.window_samples = window_samples;
  set.num_channels = rec.num_channels;
  const std::size_t n = rec.num_samples();
  if (window_samples > n) {
    if (warnings != nullptr) {
      warnings->push_back("epoch: window of " + std::to_string(window_samples) +
                          " samples exceeds recording length " + std::to_string(n) +
                          " (subject " + rec.subject_id + "); no epochs produced");
    }
    return set;
  }
  const std::size_t count = (n - window_samples) / stride_samples + 1;
  const std::size_t c = rec.num_channels;
  set.data.reserve(count * window_samples * c);
  for (std::size_t e = 0; e < count; ++e) {
    const double* start = rec.samples.data() + e * stride_samples * c;
    set.data.insert(set.data.end(), start, start + window_samples * c);
    set.labels.push_back(rec.class_id);
    set.group_ids.push_back(rec.subject_id);
  }
  return set;
}

// Drops epochs where any channel's peak-to-peak amplitude exceeds the
// threshold; survivors keep their original order.
inline EpochSet reject_epochs(const EpochSet& set, double peak_to_peak_uv,
                              std::vector<std::string>* warnings = nullptr) {
  if (!(peak_to_peak_uv > 0.0)) {
    throw ParameterError("reject_epochs: threshold must be positive");
  }
  EpochSet out;
  out.window_samples = set.window_samples;
  out.num_channels = set.num_channels;
  out.class_names = set.class_names;
  const std::size_t w = set.window_samples, c = set.num_channels;
  std::size_t dropped = 0;
  for (std::size_t e = 0; e < set.num_epochs(); ++e) {
    const double* d = set.epoch_data(e);
    bool bad = false;
    for (std::size_t ch = 0; ch < c && !bad; ++ch) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < w; ++t) {
        const double v = d[t * c + ch];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      bad = hi - lo > peak_to_peak_uv;
    }
    if (bad) {
      ++dropped;
      continue;
    }
    out.data.insert(out.data.end(), d, d + set.epoch_size());
    out.labels.push_back(set.labels[e]);
    out.group_ids.push_back(set.group_ids[e]);
  }
  if (dropped > 0 && warnings != nullptr) {
    warnings->push_back("reject_epochs: dropped " + std::to_string(dropped) + " of " +
                        std::to_string(set.num_epochs()) + " epochs over " +
                        std::to_string(peak_to_peak_uv) + " uV peak-to-peak");
  }
  return out;
}

// Per-channel mean/std computed over every sample of a (training) set.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stdev;
};

inline ChannelStats compute_channel_stats(const EpochSet& train,
                                          std::vector<std::string>* warnings = nullptr) {
  if (train.num_epochs() == 0) {
    throw ContractError("compute_channel_stats: empty training subset");
  }
  const std::size_t c = train.num_channels;
  const std::size_t rows = train.data.size() / c;
  ChannelStats st;
  st.mean.assign(c, 0.0);
  st.stdev.assign(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* d = train.data.data() + r * c;
    for (std::size_t ch = 0; ch < c; ++ch) st.mean[ch] += d[ch];
  }
  for (std::size_t ch = 0; ch < c; ++ch) st.mean[ch] /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* d = train.data.data() + r * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double dv = d[ch] - st.mean[ch];
      st.stdev[ch] += dv * dv;
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    st.stdev[ch] = std::sqrt(st.stdev[ch] / static_cast<double>(rows));
    if (st.stdev[ch] == 0.0) {
      st.stdev[ch] = 1.0;
      if (warnings != nullptr) {
        warnings->push_back("standardize: channel " + std::to_string(ch) +
                            " has zero variance in the training split; std clamped to 1");
      }
    }
  }
  return st;
}

// Z-scores every channel with the supplied (training-split) statistics.
inline EpochSet standardize(const EpochSet& set, const ChannelStats& stats) {
  const std::size_t c = set.num_channels;
  if (stats.mean.size() != c || stats.stdev.size() != c) {
    throw DimensionError("standardize: stats cover " + std::to_string(stats.mean.size()) +
                         " channels, set has " + std::to_string(c));
  }
  EpochSet out = set;
  const std::size_t rows = out.data.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    double* d = out.data.data() + r * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      d[ch] = (d[ch] - stats.mean[ch]) / stats.stdev[ch];
    }
  }
  return out;
}

}  // namespace eegformer
