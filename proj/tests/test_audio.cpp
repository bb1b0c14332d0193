// WAV I/O, STFT, mel filterbank, segmentation and the audio encoders.

#include <gtest/gtest.h>

#include <complex>
#include <filesystem>
#include <numbers>

#include "avsal/avsal.hpp"

using namespace avsal;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "avsal_test_audio";
  fs::create_directories(dir);
  return dir / name;
}

// Direct O(n^2) DFT power of one Hann-windowed frame.
std::vector<double> dft_power(const std::vector<double>& x, std::size_t start, std::size_t n) {
  std::vector<double> p(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<long double> acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const long double w = 0.5L - 0.5L * std::cos(2.0L * std::numbers::pi_v<long double> * i / n);
      const long double ang = -2.0L * std::numbers::pi_v<long double> * k * i / n;
      acc += w * x[start + i] * std::complex<long double>(std::cos(ang), std::sin(ang));
    }
    p[k] = static_cast<double>(std::norm(acc));
  }
  return p;
}

MelConfig small_mel() {
  MelConfig m;
  m.sample_rate = 8000;
  m.n_fft = 128;
  m.hop = 32;
  m.n_mels = 12;
  m.f_max = 4000;
  m.segment_width = 10;
  m.overlap_ms = 8;
  return m;
}

}  // namespace

TEST(Wav, RoundTripQuantizesTo16Bit) {
  AudioClip a{{0.0, 0.5, -0.5, 1.0, -1.0, 0.123456, 2.0}, 11025};
  const auto p = temp_path("rt.wav").string();
  write_wav(p, a);
  const auto b = read_wav(p);
  EXPECT_EQ(b.sample_rate, 11025);
  ASSERT_EQ(b.samples.size(), a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_NEAR(b.samples[i], std::clamp(a.samples[i], -1.0, 1.0), 1.0 / 32767) << i;
  }
  EXPECT_DOUBLE_EQ(b.duration(), 7.0 / 11025);
}

TEST(Wav, RejectsMalformedFiles) {
  const auto p = temp_path("bad.wav").string();
  {
    std::ofstream(p) << "RIFF....WAVEjunk";
  }
  EXPECT_THROW(read_wav(p), IoError);
  {
    std::ofstream(p) << "not a wav at all";
  }
  EXPECT_THROW(read_wav(p), IoError);
  EXPECT_THROW(read_wav(temp_path("missing.wav").string()), IoError);
}

TEST(Resample, PreservesConstantsAndScalesLength) {
  const AudioClip a{std::vector<double>(1000, 0.25), 16000};
  const auto b = resample_linear(a, 8000);
  EXPECT_EQ(b.sample_rate, 8000);
  EXPECT_EQ(b.samples.size(), 500u);
  for (double v : b.samples) EXPECT_EQ(v, 0.25);
  const AudioClip ramp{{0, 1, 2, 3}, 4};
  const auto up = resample_linear(ramp, 8);
  ASSERT_EQ(up.samples.size(), 8u);
  EXPECT_DOUBLE_EQ(up.samples[1], 0.5);
  EXPECT_DOUBLE_EQ(up.samples[5], 2.5);
  EXPECT_THROW(resample_linear(ramp, 0), ConfigError);
}

TEST(Mel, ScaleConversions) {
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
  EXPECT_EQ(hz_to_mel(0.0), 0.0);
  for (double f : {50.0, 440.0, 3999.0, 7900.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
}

TEST(Mel, FilterbankTrianglesPeakAtCenters) {
  const std::size_t n_fft = 512, bins = n_fft / 2 + 1;
  const int sr = 16000;
  const auto fb = mel_filterbank(40, n_fft, sr, 0.0, 8000.0);
  const auto centers = mel_center_frequencies(40, 0.0, 8000.0);
  ASSERT_EQ(fb.size(), 40u);
  const double bin_hz = static_cast<double>(sr) / n_fft;
  for (std::size_t m = 0; m < fb.size(); ++m) {
    ASSERT_EQ(fb[m].size(), bins);
    const auto peak = std::max_element(fb[m].begin(), fb[m].end()) - fb[m].begin();
    EXPECT_LE(std::abs(peak * bin_hz - centers[m]), bin_hz) << "band " << m;
    for (double w : fb[m]) {
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
    }
  }
  // Independent evaluation of one triangle at one bin.
  const double lo = 0, hi = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  auto edge = [&](int i) { return 700.0 * (std::pow(10.0, (lo + (hi - lo) * i / 41.0) / 2595.0) - 1.0); };
  const double l = edge(19), c = edge(20), r = edge(21);
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = k * bin_hz;
    const double want = f > l && f <= c ? (f - l) / (c - l) : f > c && f < r ? (r - f) / (r - c) : 0.0;
    EXPECT_NEAR(fb[19][k], want, 1e-12) << k;
  }
}

TEST(Mel, NarrowBandsFallBackToNearestBin) {
  // 30 bands over 33 bins: the lowest triangles fall between bin centers.
  const auto fb = mel_filterbank(30, 64, 8000, 0.0, 4000.0);
  bool fallback = false;
  for (const auto& row : fb) {
    EXPECT_GT(std::accumulate(row.begin(), row.end(), 0.0), 0.0);
    fallback = fallback || (std::count(row.begin(), row.end(), 1.0) == 1 &&
                            std::count(row.begin(), row.end(), 0.0) == static_cast<long>(row.size()) - 1);
  }
  EXPECT_TRUE(fallback);
}

TEST(Mel, RejectsInvalidConfigurations) {
  EXPECT_THROW(mel_filterbank(0, 512, 16000, 0, 8000), ConfigError);
  EXPECT_THROW(mel_filterbank(300, 512, 16000, 0, 8000), ConfigError);
  EXPECT_THROW(mel_filterbank(40, 512, 16000, 0, 9000), ConfigError);
  EXPECT_THROW(power_spectrogram(std::vector<double>(1000), 500, 100), ConfigError);
  EXPECT_THROW(power_spectrogram(std::vector<double>(1000), 256, 0), ConfigError);
  EXPECT_THROW(power_spectrogram(std::vector<double>(100), 256, 64), ShapeError);
}

TEST(Stft, MatchesDirectDft) {
  Rng rng(1);
  std::vector<double> x(300);
  for (auto& v : x) v = rng.uniform(-1, 1);
  const auto spec = power_spectrogram(x, 64, 48);
  ASSERT_EQ(spec.size(), 1 + (300 - 64) / 48);
  for (std::size_t f = 0; f < spec.size(); ++f) {
    const auto want = dft_power(x, f * 48, 64);
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(spec[f][k], want[k], 1e-10 * (1 + want[k]));
  }
}

TEST(Stft, PureToneConcentratesInItsBin) {
  const std::size_t n = 256;
  std::vector<double> x(4 * n);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * std::numbers::pi * 20 * i / n);
  for (const auto& frame : power_spectrogram(x, n, n / 2)) {
    EXPECT_EQ(std::max_element(frame.begin(), frame.end()) - frame.begin(), 20);
    // Hann leakage reaches only the two neighbours.
    for (std::size_t k = 0; k < frame.size(); ++k) {
      if (k + 1 < 20 || k > 21) {
        EXPECT_LT(frame[k], 1e-12 * frame[20]) << k;
      }
    }
  }
}

TEST(Segments, LayoutTilesTheFrames) {
  const auto mel = small_mel();
  const auto s = segment_layout(50, mel);
  EXPECT_EQ(s.overlap, 2u);  // round(8 ms * 8000 / 32)
  EXPECT_EQ(s.step, 8u);
  EXPECT_EQ(s.count, 6u);
  EXPECT_GE(s.start.back() + mel.segment_width, 50u);
  for (std::size_t i = 0; i < s.count; ++i) EXPECT_EQ(s.start[i], i * s.step);
  for (std::size_t c : {1u, 2u, 5u}) EXPECT_EQ(segment_layout(frames_for_segments(c, mel), mel).count, c);
  EXPECT_EQ(segment_layout(3, mel).count, 1u);
}

TEST(LogMel, SilenceReadsLogEps) {
  const auto mel = small_mel();
  const auto st = stft_logmel<double>({std::vector<double>(2000, 0.0), 8000}, mel);
  EXPECT_EQ(st.segments.shape(), (Shape{st.layout.count, 1, 12, 10}));
  for (double v : st.segments.data()) EXPECT_EQ(v, std::log(mel.eps));
}

TEST(LogMel, MatchesFilterbankTimesSpectrum) {
  const auto mel = small_mel();
  Rng rng(2);
  AudioClip a{std::vector<double>(1500), 8000};
  for (auto& v : a.samples) v = rng.uniform(-0.3, 0.3);
  const auto st = stft_logmel<double>(a, mel);
  const auto spec = power_spectrogram(a.samples, mel.n_fft, mel.hop);
  const auto fb = mel_filterbank(mel.n_mels, mel.n_fft, mel.sample_rate, mel.f_min, mel.f_max);
  const auto& L = st.layout;
  for (std::size_t s = 0; s < L.count; ++s)
    for (std::size_t j = 0; j < mel.segment_width; ++j)
      for (std::size_t m = 0; m < mel.n_mels; ++m) {
        const std::size_t f = L.start[s] + j;
        double want = std::log(mel.eps);
        if (f < spec.size()) {
          long double e = 0;
          for (std::size_t k = 0; k < spec[f].size(); ++k) e += fb[m][k] * spec[f][k];
          want = std::log(static_cast<double>(e) + mel.eps);
        }
        EXPECT_NEAR(st.segments.data()[(s * mel.n_mels + m) * mel.segment_width + j], want, 1e-9);
      }
}

TEST(LogMel, RejectsRateMismatchAndNonFinite) {
  const auto mel = small_mel();
  EXPECT_THROW(stft_logmel<double>({std::vector<double>(2000, 0.0), 16000}, mel), ConfigError);
  AudioClip bad{std::vector<double>(2000, 0.0), 8000};
  bad.samples[7] = std::nan("");
  EXPECT_THROW(stft_logmel<double>(bad, mel), NumericError);
}

TEST(AudioEncoder, FeatureShapeMatchesForward) {
  Rng rng(3);
  AudioEncoder<double> enc({4, 8, 16, 32}, rng);
  rng = Rng(4);
  const auto x = rng.uniform_tensor<double>({3, 1, 112, 192}, 1.0);
  NoGradGuard<double> guard;
  const auto y = enc(x);
  const auto fs = enc.feature_shape(112, 192);
  EXPECT_EQ(y.shape(), (Shape{3, fs[2], fs[0], fs[1]}));
  EXPECT_EQ(fs, (Shape{7, 12, 32}));
}

TEST(TemporalEnhancer, OutputShapeAndAttentionRows) {
  Rng rng(5);
  TemporalEnhancer<double> te(12, 6, rng);
  const auto y = te(rng.uniform_tensor<double>({5, 3, 2, 2}, 1.0));
  EXPECT_EQ(y.shape(), (Shape{5, 6}));
  const auto& w = te.last_attention();
  ASSERT_EQ(w.shape(), (Shape{5, 5}));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += w.data()[r * 5 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(AlignAudio, IdentityAtEqualLengthAndConstantPreserving) {
  Rng rng(6);
  const auto f = rng.uniform_tensor<double>({4, 3}, 1.0);
  const auto same = align_audio(f, 4);
  ASSERT_EQ(same.shape(), (Shape{1, 4, 3}));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(same.data()[i], f.data()[i]);
  Tensor<double> c({3, 2}, {1, 2, 1, 2, 1, 2});
  const auto up = align_audio(c, 7);
  for (std::size_t t = 0; t < 7; ++t) {
    EXPECT_DOUBLE_EQ(up.data()[2 * t], 1.0);
    EXPECT_DOUBLE_EQ(up.data()[2 * t + 1], 2.0);
  }
}
