#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "avsal/audio.hpp"
#include "avsal/metrics.hpp"

namespace avsal {

struct SyntheticConfig {
  std::size_t frames = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  double fps = 16.0;
  int sample_rate = 8000;
  double audio_decides_fraction = 0.5;
  double blob_sigma = 2.0;
  double noise = 0.05;          // amplitude of static background noise
  std::size_t fixations = 24;
  double fixation_sigma = 1.0;  // spread of sampled fixations around the target
  double density_sigma = 1.5;   // blur turning fixations into the GT density
  double f_low = 300.0;
  double f_high = 1500.0;
};

struct SyntheticSample {
  std::vector<double> video;      // [3, T, H, W] in [0, 1]
  AudioClip audio;
  std::vector<double> density;    // [H, W], sums to 1
  std::vector<double> fixations;  // [H, W] in {0, 1}
  bool audio_decides = false;
  std::vector<std::array<double, 2>> blobs_final;  // (x, y) of every blob at the last frame
  std::array<double, 2> target{};                   // designated blob at the last frame
  double av_correlation = 0.0;  // corr(designated x, tone pitch) over frames
};

namespace detail {

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

}  // namespace detail

/// One clip. The designated blob moves linearly from p0 to p1; a tone follows
/// it with pitch linear in x and amplitude linear in y. Audio-decides clips
/// add a visually identical blob mirrored about the vertical center line, so
/// only the pitch tells the two apart.
inline SyntheticSample make_synthetic_sample(const SyntheticConfig& cfg, bool audio_decides,
                                             std::mt19937_64& rng) {
  const std::size_t Tn = cfg.frames, H = cfg.height, W = cfg.width;
  const double Wm = static_cast<double>(W - 1), Hm = static_cast<double>(H - 1);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double margin = 3.0;
  const double x_hi = audio_decides ? Wm / 2 - margin - 1 : Wm - margin;
  std::array<double, 2> p0{uni(margin, x_hi), uni(margin, Hm - margin)};
  std::array<double, 2> p1{uni(margin, x_hi), uni(margin, Hm - margin)};
  const bool right = audio_decides && uni(0, 1) < 0.5;
  if (right) {
    p0[0] = Wm - p0[0];
    p1[0] = Wm - p1[0];
  }
  const std::array<double, 3> color{uni(0.5, 1.0), uni(0.5, 1.0), uni(0.5, 1.0)};
  auto pos = [&](double t) {
    const double a = Tn > 1 ? t / static_cast<double>(Tn - 1) : 0.0;
    return std::array<double, 2>{std::lerp(p0[0], p1[0], a), std::lerp(p0[1], p1[1], a)};
  };

  SyntheticSample s;
  s.audio_decides = audio_decides;
  std::vector<double> background(H * W);
  for (auto& v : background) v = uni(0.0, cfg.noise);
  s.video.assign(3 * Tn * H * W, 0.0);
  std::vector<double> xs, pitch;
  for (std::size_t t = 0; t < Tn; ++t) {
    const auto p = pos(static_cast<double>(t));
    std::vector<std::array<double, 2>> blobs{p};
    if (audio_decides) blobs.push_back({Wm - p[0], p[1]});
    xs.push_back(p[0]);
    pitch.push_back(cfg.f_low + (cfg.f_high - cfg.f_low) * p[0] / Wm);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double b = 0;
        for (auto& q : blobs) {
          const double dx = static_cast<double>(x) - q[0], dy = static_cast<double>(y) - q[1];
          b = std::max(b, std::exp(-(dx * dx + dy * dy) / (2 * cfg.blob_sigma * cfg.blob_sigma)));
        }
        for (std::size_t c = 0; c < 3; ++c) {
          s.video[((c * Tn + t) * H + y) * W + x] =
              std::clamp(background[y * W + x] + b * color[c], 0.0, 1.0);
        }
      }
    if (t + 1 == Tn) s.blobs_final = blobs;
  }
  s.target = pos(static_cast<double>(Tn - 1));
  s.av_correlation = detail::pearson(xs, pitch);

  const auto n_audio = static_cast<std::size_t>(std::llround(Tn / cfg.fps * cfg.sample_rate));
  s.audio.sample_rate = cfg.sample_rate;
  s.audio.samples.resize(n_audio);
  double phase = 0;
  for (std::size_t i = 0; i < n_audio; ++i) {
    const double tf = std::min(static_cast<double>(i) / cfg.sample_rate * cfg.fps,
                               static_cast<double>(Tn - 1));
    const auto p = pos(tf);
    const double f = cfg.f_low + (cfg.f_high - cfg.f_low) * p[0] / Wm;
    const double amp = 0.2 + 0.6 * p[1] / Hm;
    phase += 2 * std::numbers::pi * f / cfg.sample_rate;
    s.audio.samples[i] = amp * std::sin(phase);
  }

  s.fixations.assign(H * W, 0.0);
  std::normal_distribution<double> jitter(0.0, cfg.fixation_sigma);
  for (std::size_t k = 0; k < cfg.fixations; ++k) {
    const auto x = static_cast<std::size_t>(std::clamp(std::lround(s.target[0] + jitter(rng)), 0L,
                                                       static_cast<long>(W - 1)));
    const auto y = static_cast<std::size_t>(std::clamp(std::lround(s.target[1] + jitter(rng)), 0L,
                                                       static_cast<long>(H - 1)));
    s.fixations[y * W + x] = 1.0;
  }
  s.density = metrics::density_from_fixations(s.fixations, H, W, cfg.density_sigma);
  return s;
}

/// `count` clips from one seeded stream; the first round(fraction * count)
/// positions of a seeded permutation are audio-decides clips.
inline std::vector<SyntheticSample> generate_synthetic(const SyntheticConfig& cfg, std::size_t count,
                                                       std::uint64_t seed) {
  if (cfg.height % 32 != 0 || cfg.width % 32 != 0 || cfg.frames % 2 != 0 || cfg.frames == 0) {
    throw ConfigError("data.height", "clip must have even T and H, W divisible by 32");
  }
  std::mt19937_64 rng(seed);
  std::vector<bool> decides(count, false);
  const auto n_dec = static_cast<std::size_t>(std::llround(cfg.audio_decides_fraction * count));
  for (std::size_t i = 0; i < n_dec && i < count; ++i) decides[i] = true;
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = rng() % i;
    const bool tmp = decides[i - 1];
    decides[i - 1] = decides[j];
    decides[j] = tmp;
  }
  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_synthetic_sample(cfg, decides[i], rng));
  return out;
}

}  // namespace avsal
