#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "avsal/module.hpp"

namespace avsal {

struct AudioClip {
  std::vector<double> samples;  // mono, [-1, 1]
  int sample_rate = 16000;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// ---------------------------------------------------------------- WAV I/O

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::ostream& os, std::uint16_t v) {
  os.put(static_cast<char>(v & 0xff));
  os.put(static_cast<char>(v >> 8));
}

}  // namespace detail

/// Reads a PCM 16-bit mono RIFF/WAVE file.
inline AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), {});
  if (buf.size() < 12 || std::string(buf.begin(), buf.begin() + 4) != "RIFF" ||
      std::string(buf.begin() + 8, buf.begin() + 12) != "WAVE") {
    throw IoError(path + ": not a RIFF/WAVE file");
  }
  AudioClip clip;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.begin() + pos, buf.begin() + pos + 4);
    const std::size_t len = detail::read_u32(&buf[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + len > buf.size()) throw IoError(path + ": truncated chunk " + id);
    if (id == "fmt ") {
      if (len < 16) throw IoError(path + ": short fmt chunk");
      const auto format = detail::read_u16(&buf[body]);
      const auto channels = detail::read_u16(&buf[body + 2]);
      const auto bits = detail::read_u16(&buf[body + 14]);
      if (format != 1 || channels != 1 || bits != 16) {
        throw IoError(path + ": only PCM 16-bit mono is supported");
      }
      clip.sample_rate = static_cast<int>(detail::read_u32(&buf[body + 4]));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError(path + ": data before fmt");
      clip.samples.resize(len / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(detail::read_u16(&buf[body + 2 * i]));
        clip.samples[i] = v / 32768.0;
      }
      return clip;
    }
    pos = body + len + (len & 1);
  }
  throw IoError(path + ": no data chunk");
}

inline void write_wav(const std::string& path, const AudioClip& clip) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + 2 * n);
  os.write("WAVEfmt ", 8);
  detail::put_u32(os, 16);
  detail::put_u16(os, 1);
  detail::put_u16(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(clip.sample_rate));
  detail::put_u32(os, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  detail::put_u16(os, 2);
  detail::put_u16(os, 16);
  os.write("data", 4);
  detail::put_u32(os, 2 * n);
  for (double s : clip.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    detail::put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  if (!os) throw IoError("write failed: " + path);
}

/// Linear-interpolation resampling.
inline AudioClip resample_linear(const AudioClip& clip, int rate) {
  if (rate <= 0) throw ConfigError("audio.sample_rate", "sample rate must be positive");
  if (rate == clip.sample_rate || clip.samples.empty()) return {clip.samples, rate};
  const auto n = static_cast<std::size_t>(
      std::llround(static_cast<double>(clip.samples.size()) * rate / clip.sample_rate));
  AudioClip out{std::vector<double>(n), rate};
  const double ratio = static_cast<double>(clip.sample_rate) / rate;
  for (std::size_t i = 0; i < n; ++i) {
    const double src = static_cast<double>(i) * ratio;
    const auto i0 = static_cast<std::size_t>(src);
    if (i0 + 1 >= clip.samples.size()) {
      out.samples[i] = clip.samples.back();
    } else {
      out.samples[i] = std::lerp(clip.samples[i0], clip.samples[i0 + 1], src - static_cast<double>(i0));
    }
  }
  return out;
}

// ---------------------------------------------------------------- log-Mel

struct MelConfig {
  int sample_rate = 16000;
  std::size_t n_fft = 512;
  std::size_t hop = 256;
  std::size_t n_mels = 112;
  double f_min = 0.0;
  double f_max = 8000.0;
  std::size_t segment_width = 192;  // W_a, frames per segment
  double overlap_ms = 11.0;         // overlap between adjacent segments
  double eps = 1e-6;
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Center frequency of every band (the n_mels interior points of the mel grid).
inline std::vector<double> mel_center_frequencies(std::size_t n_mels, double f_min, double f_max) {
  const double lo = hz_to_mel(f_min), hi = hz_to_mel(f_max);
  std::vector<double> c(n_mels);
  for (std::size_t m = 0; m < n_mels; ++m) {
    c[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(n_mels + 1));
  }
  return c;
}

/// Triangular filters on the mel scale, [n_mels][n_fft/2 + 1]. Each triangle
/// is evaluated on bin frequencies; bands narrower than a bin fall back to the
/// nearest bin so that no row is empty.
inline std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t n_fft,
                                                       int sample_rate, double f_min,
                                                       double f_max) {
  const std::size_t bins = n_fft / 2 + 1;
  if (n_mels == 0 || n_mels > bins) {
    throw ConfigError("audio.n_mels", "n_mels must be in [1, n_fft/2+1]");
  }
  if (!(f_min >= 0.0 && f_max > f_min && f_max <= sample_rate / 2.0 + 1e-9)) {
    throw ConfigError("audio.f_max", "need 0 <= f_min < f_max <= sample_rate/2");
  }
  const double lo = hz_to_mel(f_min), hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
  std::vector<std::vector<double>> fb(n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double l = edges[m], c = edges[m + 1], r = edges[m + 2];
    double row = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f > l && f <= c) w = (f - l) / (c - l);
      else if (f > c && f < r) w = (r - f) / (r - c);
      fb[m][k] = w;
      row += w;
    }
    if (row <= 0.0) {
      const auto k = static_cast<std::size_t>(std::lround(c / bin_hz));
      fb[m][std::min(k, bins - 1)] = 1.0;
    }
  }
  return fb;
}

/// Power spectrogram [frames][n_fft/2 + 1] with a periodic Hann window and no
/// centering: frame f covers samples [f*hop, f*hop + n_fft).
inline std::vector<std::vector<double>> power_spectrogram(const std::vector<double>& x,
                                                          std::size_t n_fft, std::size_t hop) {
  if (n_fft == 0 || (n_fft & (n_fft - 1)) != 0) {
    throw ConfigError("audio.n_fft", "n_fft must be a power of two");
  }
  if (hop == 0 || hop > n_fft) throw ConfigError("audio.hop", "hop must be in [1, n_fft]");
  if (x.size() < n_fft) throw ShapeError("stft: clip shorter than one window");
  const std::size_t frames = 1 + (x.size() - n_fft) / hop;
  const std::size_t bins = n_fft / 2 + 1;
  std::vector<double> window(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(n_fft));
  }
  double* in = fftw_alloc_real(n_fft);
  fftw_complex* out = fftw_alloc_complex(bins);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in, out, FFTW_ESTIMATE);
  std::vector<std::vector<double>> spec(frames, std::vector<double>(bins));
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < n_fft; ++i) in[i] = x[f * hop + i] * window[i];
    fftw_execute(plan);
    for (std::size_t k = 0; k < bins; ++k) spec[f][k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
  }
  fftw_destroy_plan(plan);
  fftw_free(in);
  fftw_free(out);
  return spec;
}

struct SegmentLayout {
  std::size_t frames = 0;          // STFT frames in the clip
  std::size_t overlap = 0;         // frames shared by adjacent segments
  std::size_t step = 0;            // segment_width - overlap
  std::size_t count = 0;           // T_a
  std::vector<std::size_t> start;  // first frame of each segment
};

/// Tiles `frames` STFT frames with segments of `width` frames overlapping by
/// round(overlap_ms * sr / hop) frames (at least one).
inline SegmentLayout segment_layout(std::size_t frames, const MelConfig& cfg) {
  if (cfg.segment_width < 2) throw ConfigError("audio.segment_width", "must be at least 2");
  SegmentLayout s;
  s.frames = frames;
  const double ov = cfg.overlap_ms * 1e-3 * cfg.sample_rate / static_cast<double>(cfg.hop);
  s.overlap = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ov)), 1,
                                      cfg.segment_width - 1);
  s.step = cfg.segment_width - s.overlap;
  s.count = frames <= cfg.segment_width
                ? 1
                : 1 + (frames - cfg.segment_width + s.step - 1) / s.step;
  for (std::size_t i = 0; i < s.count; ++i) s.start.push_back(i * s.step);
  return s;
}

/// Frames needed for exactly `count` segments.
inline std::size_t frames_for_segments(std::size_t count, const MelConfig& cfg) {
  const auto s = segment_layout(cfg.segment_width, cfg);
  return cfg.segment_width + (count - 1) * s.step;
}

template <class T>
struct LogMelStack {
  Tensor<T> segments;  // [T_a, 1, H_a, W_a]
  SegmentLayout layout;
};

/// log(mel power + eps), cut into T_a segments [n_mels x segment_width]. The
/// tail of the last segment beyond the clip reads log(eps).
template <class T>
LogMelStack<T> stft_logmel(const AudioClip& clip, const MelConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate) {
    throw ConfigError("audio.sample_rate", "clip rate " + std::to_string(clip.sample_rate) +
                                               " differs from configured rate");
  }
  if (cfg.n_mels > cfg.n_fft / 2 + 1) throw ConfigError("audio.n_mels", "exceeds n_fft/2+1");
  for (double s : clip.samples) {
    if (!std::isfinite(s)) throw NumericError("audio clip contains non-finite samples");
  }
  const auto spec = power_spectrogram(clip.samples, cfg.n_fft, cfg.hop);
  const auto fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max);
  const std::size_t frames = spec.size();
  const auto layout = segment_layout(frames, cfg);
  const std::size_t Ha = cfg.n_mels, Wa = cfg.segment_width;
  const T floor_value = static_cast<T>(std::log(cfg.eps));
  std::vector<T> data(layout.count * Ha * Wa, floor_value);
  for (std::size_t s = 0; s < layout.count; ++s)
    for (std::size_t j = 0; j < Wa; ++j) {
      const std::size_t f = layout.start[s] + j;
      if (f >= frames) break;
      for (std::size_t m = 0; m < Ha; ++m) {
        double e = 0.0;
        for (std::size_t k = 0; k < fb[m].size(); ++k) e += fb[m][k] * spec[f][k];
        data[(s * Ha + m) * Wa + j] = static_cast<T>(std::log(e + cfg.eps));
      }
    }
  return {Tensor<T>({layout.count, 1, Ha, Wa}, std::move(data)), layout};
}

// ---------------------------------------------------------------- encoders

/// Four 3x3 stride-2 conv + ReLU stages over each segment. Segments are the
/// batch axis: [T_a, 1, H_a, W_a] -> [T_a, C_a, h_a, w_a].
template <class T>
class AudioEncoder : public Module<T> {
 public:
  AudioEncoder(const std::vector<std::size_t>& channels, Rng& rng) {
    std::size_t in = 1;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      convs_.push_back(std::make_unique<Conv3d<T>>(
          ConvSpec{in, channels[i], {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, true}, rng));
      this->register_module("conv" + std::to_string(i), convs_.back().get());
      in = channels[i];
    }
  }

  Tensor<T> operator()(const Tensor<T>& segments) const {
    if (segments.ndim() != 4) throw ShapeError("audio encoder: expected [T_a,1,H_a,W_a]");
    const Shape& s = segments.shape();
    Tensor<T> x = reshape(segments, {s[0], s[1], 1, s[2], s[3]});
    for (auto& c : convs_) x = relu((*c)(x));
    const Shape& o = x.shape();
    return reshape(x, {o[0], o[1], o[3], o[4]});
  }

  /// [h_a, w_a, C_a] for an H_a x W_a segment.
  Shape feature_shape(std::size_t Ha, std::size_t Wa) const {
    Shape s{1, 1, 1, Ha, Wa};
    for (auto& c : convs_) s = c->output_shape(s);
    return {s[3], s[4], s[1]};
  }

  std::vector<Conv3d<T>*> convs() const {
    std::vector<Conv3d<T>*> out;
    for (auto& c : convs_) out.push_back(c.get());
    return out;
  }

 private:
  std::vector<std::unique_ptr<Conv3d<T>>> convs_;
};

/// Patch embedding (flatten + linear) followed by one pre-norm single-head
/// transformer layer over the T_a segment axis.
template <class T>
class TemporalEnhancer : public Module<T> {
 public:
  TemporalEnhancer(std::size_t in_features, std::size_t dim, Rng& rng)
      : embed_(in_features, dim, rng),
        norm1_({dim}, 1, 1),
        q_(dim, dim, rng),
        k_(dim, dim, rng),
        v_(dim, dim, rng),
        o_(dim, dim, rng),
        norm2_({dim}, 1, 1),
        ff1_(dim, 2 * dim, rng),
        ff2_(2 * dim, dim, rng) {
    this->register_module("embed", &embed_);
    this->register_module("norm1", &norm1_);
    this->register_module("q", &q_);
    this->register_module("k", &k_);
    this->register_module("v", &v_);
    this->register_module("o", &o_);
    this->register_module("norm2", &norm2_);
    this->register_module("ff1", &ff1_);
    this->register_module("ff2", &ff2_);
  }

  /// features [T_a, ...] -> [T_a, D_a]; the last attention matrix is kept.
  Tensor<T> operator()(const Tensor<T>& features) {
    const std::size_t Ta = features.dim(0);
    auto x = embed_(reshape(features, {Ta, features.numel() / Ta}));
    auto h = norm1_(x);
    auto att = scaled_dot_attention(q_(h), k_(h), v_(h));
    last_weights_ = att.weights;
    x = x + o_(att.output);
    return x + ff2_(gelu(ff1_(norm2_(x))));
  }

  const Tensor<T>& last_attention() const { return last_weights_; }
  Linear<T>& value() { return v_; }
  Linear<T>& out_proj() { return o_; }

 private:
  Linear<T> embed_;
  LayerNorm<T> norm1_;
  Linear<T> q_, k_, v_, o_;
  LayerNorm<T> norm2_;
  Linear<T> ff1_, ff2_;
  Tensor<T> last_weights_;
};

/// Linear resampling of [T_a, D] audio features onto `steps` video steps,
/// returned as [1, steps, D].
template <class T>
Tensor<T> align_audio(const Tensor<T>& feats, std::size_t steps) {
  const std::size_t Ta = feats.dim(0), D = feats.dim(1);
  auto x = reshape(permute(feats, {1, 0}), {1, D, Ta, 1, 1});
  auto r = resize_trilinear(x, {steps, 1, 1});
  return reshape(permute(reshape(r, {D, steps}), {1, 0}), {1, steps, D});
}

}  // namespace avsal
