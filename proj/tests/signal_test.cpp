#include "eegformer/signal.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "eegformer/rng.hpp"

using namespace eegformer;

namespace {

constexpr double kPi = 3.14159265358979323846;

Recording sine_recording(double freq_hz, double amplitude, double seconds,
                         double fs = 128.0, std::size_t channels = 2,
                         double phase = 0.0) {
  Recording rec;
  rec.num_channels = channels;
  rec.sample_rate_hz = fs;
  rec.channel_names.assign(channels, "");
  for (std::size_t ch = 0; ch < channels; ++ch) {
    rec.channel_names[ch] = "ch" + std::to_string(ch);
  }
  const std::size_t n = static_cast<std::size_t>(seconds * fs);
  rec.samples.resize(n * channels);
  for (std::size_t t = 0; t < n; ++t) {
    const double v = amplitude * std::sin(2.0 * kPi * freq_hz * t / fs + phase);
    for (std::size_t ch = 0; ch < channels; ++ch) rec.samples[t * channels + ch] = v;
  }
  return rec;
}

// Amplitude oracle: RMS * sqrt(2) over the central 50% of one channel.
double central_amplitude(const Recording& rec, std::size_t channel = 0) {
  const std::size_t n = rec.num_samples();
  const std::size_t lo = n / 4, hi = n - n / 4;
  double acc = 0.0;
  for (std::size_t t = lo; t < hi; ++t) {
    const double v = rec.samples[t * rec.num_channels + channel];
    acc += v * v;
  }
  return std::sqrt(2.0 * acc / static_cast<double>(hi - lo));
}

TEST(Bandpass, PassbandSinePreservedWithinFivePercent) {
  Recording rec = sine_recording(10.0, 1.0, 4.0);
  Recording out = bandpass_filter(rec, 1.0, 40.0);
  const double amp = central_amplitude(out);
  EXPECT_GT(amp, 0.95);
  EXPECT_LT(amp, 1.05);
}

TEST(Bandpass, StopbandSineAttenuatedTwentyDb) {
  Recording rec = sine_recording(60.0, 1.0, 4.0);
  Recording out = bandpass_filter(rec, 1.0, 40.0);
  EXPECT_LE(central_amplitude(out), 0.1);
}

TEST(Bandpass, OneOctaveBeyondEitherCutoff) {
  // one octave below the 1 Hz edge
  Recording low = sine_recording(0.5, 1.0, 16.0);
  EXPECT_LE(central_amplitude(bandpass_filter(low, 1.0, 40.0)), 0.1);
  // one octave above a 20 Hz edge
  Recording high = sine_recording(40.0, 1.0, 4.0);
  EXPECT_LE(central_amplitude(bandpass_filter(high, 1.0, 20.0)), 0.1);
}

TEST(Bandpass, AllZeroRecordingStaysZero) {
  Recording rec = sine_recording(10.0, 0.0, 2.0);
  Recording out = bandpass_filter(rec, 1.0, 40.0);
  for (double v : out.samples) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Bandpass, RejectsCutoffsOutsideNyquistRange) {
  Recording rec = sine_recording(10.0, 1.0, 1.0);
  EXPECT_THROW(bandpass_filter(rec, 0.0, 40.0), ParameterError);
  EXPECT_THROW(bandpass_filter(rec, -1.0, 40.0), ParameterError);
  EXPECT_THROW(bandpass_filter(rec, 40.0, 1.0), ParameterError);
  EXPECT_THROW(bandpass_filter(rec, 1.0, 64.0), ParameterError);
  EXPECT_THROW(bandpass_filter(rec, 1.0, 90.0), ParameterError);
}

TEST(Bandpass, FilteringIsLinear) {
  Rng rng(7);
  Recording x = sine_recording(0.0, 0.0, 2.0);
  Recording y = x;
  for (double& v : x.samples) v = rng.uniform(-50, 50);
  for (double& v : y.samples) v = rng.uniform(-50, 50);
  const double a = 1.75, b = -0.4;
  Recording combo = x;
  for (std::size_t i = 0; i < combo.samples.size(); ++i) {
    combo.samples[i] = a * x.samples[i] + b * y.samples[i];
  }
  Recording fx = bandpass_filter(x, 1.0, 40.0);
  Recording fy = bandpass_filter(y, 1.0, 40.0);
  Recording fc = bandpass_filter(combo, 1.0, 40.0);
  for (std::size_t i = 0; i < fc.samples.size(); ++i) {
    EXPECT_NEAR(fc.samples[i], a * fx.samples[i] + b * fy.samples[i], 1e-9);
  }
}

TEST(Bandpass, ZeroPhaseCrossCorrelationPeaksAtLagZero) {
  Recording rec = sine_recording(10.0, 1.0, 4.0);
  Recording out = bandpass_filter(rec, 1.0, 40.0);
  const std::size_t n = rec.num_samples();
  const int max_lag = 6;  // half a 10 Hz cycle at 128 Hz
  double best = -std::numeric_limits<double>::infinity();
  int best_lag = -999;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (std::size_t t = max_lag; t + max_lag < n; ++t) {
      acc += rec.samples[t * rec.num_channels] *
             out.samples[(t + lag) * out.num_channels];
    }
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  EXPECT_EQ(best_lag, 0);
}

TEST(Epoch, CountsMatchTheFloorFormula) {
  Recording rec = sine_recording(10.0, 1.0, 10.0);  // 1280 samples
  EXPECT_EQ(epoch(rec, 256, 256).num_epochs(), 5u);
  EXPECT_EQ(epoch(rec, 256, 128).num_epochs(), 9u);
}

TEST(Epoch, WindowLongerThanRecordingWarnsAndYieldsEmpty) {
  Recording rec = sine_recording(10.0, 1.0, 100.0 / 128.0);  // 100 samples
  std::vector<std::string> warnings;
  EpochSet set = epoch(rec, 256, 128, &warnings);
  EXPECT_EQ(set.num_epochs(), 0u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("no epochs"), std::string::npos);
}

TEST(Epoch, CountFormulaExactOverRandomizedShapes) {
  Rng rng(11);
  for (int round = 0; round < 200; ++round) {
    const std::size_t len = 1 + rng.below(4000);
    const std::size_t window = 1 + rng.below(len);
    const std::size_t stride = 1 + rng.below(600);
    Recording rec;
    rec.num_channels = 1;
    rec.channel_names = {"c"};
    rec.samples.assign(len, 0.0);
    const EpochSet set = epoch(rec, window, stride);
    EXPECT_EQ(set.num_epochs(), (len - window) / stride + 1);
  }
}

TEST(Epoch, NonOverlappingConcatenationReconstructsTruncatedInput) {
  Rng rng(13);
  Recording rec = sine_recording(0.0, 0.0, 9.9, 128.0, 3);
  for (double& v : rec.samples) v = rng.uniform(-10, 10);
  const std::size_t window = 256;
  EpochSet set = epoch(rec, window, window);
  const std::size_t kept = set.num_epochs() * window * rec.num_channels;
  ASSERT_EQ(set.data.size(), kept);
  for (std::size_t i = 0; i < kept; ++i) {
    ASSERT_DOUBLE_EQ(set.data[i], rec.samples[i]);
  }
}

TEST(Epoch, CarriesClassAndSubject) {
  Recording rec = sine_recording(10.0, 1.0, 4.0);
  rec.subject_id = "s42";
  rec.class_id = 3;
  EpochSet set = epoch(rec, 128, 128);
  for (std::size_t e = 0; e < set.num_epochs(); ++e) {
    EXPECT_EQ(set.labels[e], 3);
    EXPECT_EQ(set.group_ids[e], "s42");
  }
}

TEST(Reject, InfiniteThresholdIsIdentity) {
  Recording rec = sine_recording(10.0, 100.0, 4.0);
  EpochSet set = epoch(rec, 128, 128);
  EpochSet kept = reject_epochs(set, std::numeric_limits<double>::infinity());
  EXPECT_EQ(kept.num_epochs(), set.num_epochs());
  EXPECT_EQ(kept.data, set.data);
}

TEST(Reject, SpikeEpochRemoved) {
  Recording rec = sine_recording(10.0, 10.0, 4.0);
  // plant a +-1000 uV spike inside the second window
  const std::size_t c = rec.num_channels;
  rec.samples[150 * c] = 1000.0;
  rec.samples[151 * c] = -1000.0;
  EpochSet set = epoch(rec, 128, 128);
  ASSERT_EQ(set.num_epochs(), 4u);
  std::vector<std::string> warnings;
  EpochSet kept = reject_epochs(set, 200.0, &warnings);
  EXPECT_EQ(kept.num_epochs(), 3u);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Reject, SurvivorsKeepOriginalOrder) {
  EpochSet set;
  set.window_samples = 4;
  set.num_channels = 1;
  for (int e = 0; e < 10; ++e) {
    const bool bad = e == 2 || e == 5 || e == 6;
    for (int t = 0; t < 4; ++t) set.data.push_back(bad && t == 0 ? 500.0 : e);
    set.labels.push_back(e);
    set.group_ids.push_back("s");
  }
  EpochSet kept = reject_epochs(set, 200.0);
  EXPECT_EQ(kept.labels, (std::vector<int>{0, 1, 3, 4, 7, 8, 9}));
}

TEST(Reject, RejectsNonPositiveThreshold) {
  EpochSet set;
  EXPECT_THROW(reject_epochs(set, 0.0), ParameterError);
  EXPECT_THROW(reject_epochs(set, -5.0), ParameterError);
}

TEST(Standardize, TrainSplitBecomesZeroMeanUnitStd) {
  Rng rng(17);
  EpochSet train;
  train.window_samples = 64;
  train.num_channels = 3;
  for (int e = 0; e < 8; ++e) {
    for (int t = 0; t < 64; ++t) {
      train.data.push_back(rng.uniform(-30, 10));   // channel 0
      train.data.push_back(rng.uniform(5, 6));      // channel 1
      train.data.push_back(rng.normal() * 4 + 100); // channel 2
    }
    train.labels.push_back(0);
    train.group_ids.push_back("s");
  }
  const ChannelStats stats = compute_channel_stats(train);
  const EpochSet z = standardize(train, stats);
  const std::size_t rows = z.data.size() / 3;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double m = 0;
    for (std::size_t r = 0; r < rows; ++r) m += z.data[r * 3 + ch];
    m /= static_cast<double>(rows);
    double var = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = z.data[r * 3 + ch] - m;
      var += d * d;
    }
    var /= static_cast<double>(rows);
    EXPECT_LT(std::abs(m), 1e-9);
    EXPECT_LT(std::abs(std::sqrt(var) - 1.0), 1e-9);
  }
}

TEST(Standardize, ConstantChannelClampsWithWarning) {
  EpochSet train;
  train.window_samples = 4;
  train.num_channels = 1;
  train.data.assign(8, 5.0);
  train.labels = {0, 0};
  train.group_ids = {"a", "a"};
  std::vector<std::string> warnings;
  const ChannelStats stats = compute_channel_stats(train, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("zero variance"), std::string::npos);
  const EpochSet z = standardize(train, stats);
  for (double v : z.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Standardize, TwoValueChannelBecomesPlusMinusOne) {
  EpochSet train;
  train.window_samples = 2;
  train.num_channels = 1;
  train.data = {1.0, 3.0};
  train.labels = {0};
  train.group_ids = {"a"};
  const EpochSet z = standardize(train, compute_channel_stats(train));
  EXPECT_DOUBLE_EQ(z.data[0], -1.0);
  EXPECT_DOUBLE_EQ(z.data[1], 1.0);
}

TEST(Standardize, TestDataUsesTrainStatistics) {
  EpochSet train;
  train.window_samples = 2;
  train.num_channels = 1;
  train.data = {1.0, 3.0};  // mean 2, std 1
  train.labels = {0};
  train.group_ids = {"a"};
  EpochSet test = train;
  test.data = {10.0, 20.0};
  const ChannelStats stats = compute_channel_stats(train);
  const EpochSet z = standardize(test, stats);
  EXPECT_DOUBLE_EQ(z.data[0], 8.0);   // (10 - 2) / 1, not test's own stats
  EXPECT_DOUBLE_EQ(z.data[1], 18.0);
}

}  // namespace
