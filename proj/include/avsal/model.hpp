#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "avsal/audio.hpp"
#include "avsal/decoder.hpp"
#include "avsal/enhancement.hpp"
#include "avsal/fusion.hpp"
#include "avsal/visual_encoder.hpp"

namespace avsal {

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t fused_channels = 192;  // C*
  bool f1_adds_f3 = false;
  std::string placement = "LTEB:1,2,3;DLTFB:4";
  TokenConfig tokens;
  ShiftConfig shift;
  bool use_audio = true;
  FusionMode fusion = FusionMode::kAmfb;
  std::array<bool, 4> fusion_levels{true, true, true, true};
  double max_offset = 0.0;  // 0 leaves offsets unbounded
  MelConfig mel;
  std::vector<std::size_t> audio_channels{16, 32, 64, 128};
  std::size_t audio_dim = 128;  // D_a
  DecoderMode decoder = DecoderMode::kMulti;
  std::size_t decoder_min_channels = 16;
  std::uint64_t init_seed = 0;
};

template <class T>
struct ModelOutput {
  Tensor<T> saliency;             // [N, 1, 1, H, W]
  std::vector<Tensor<T>> levels;  // s_1..s_4 for the multi decoder
  std::array<Tensor<T>, 4> refined;
};

/// Audio branch: log-Mel segments -> conv encoder -> temporal enhancer.
template <class T>
class AudioBranch : public Module<T> {
 public:
  AudioBranch(const ModelConfig& cfg, Rng& rng) : encoder_(cfg.audio_channels, rng) {
    const auto fs = encoder_.feature_shape(cfg.mel.n_mels, cfg.mel.segment_width);
    enhancer_ = std::make_unique<TemporalEnhancer<T>>(fs[0] * fs[1] * fs[2], cfg.audio_dim, rng);
    this->register_module("encoder", &encoder_);
    this->register_module("enhancer", enhancer_.get());
  }

  /// [T_a, 1, H_a, W_a] -> [1, steps, D_a].
  Tensor<T> operator()(const Tensor<T>& segments, std::size_t steps) {
    return align_audio((*enhancer_)(encoder_(segments)), steps);
  }

  AudioEncoder<T>& encoder() { return encoder_; }
  TemporalEnhancer<T>& enhancer() { return *enhancer_; }

 private:
  AudioEncoder<T> encoder_;
  std::unique_ptr<TemporalEnhancer<T>> enhancer_;
};

/// Encoder pyramid -> top-down fusion -> per-level blocks -> audio fusion ->
/// decoder. All parameters are drawn from one stream seeded by init_seed.
template <class T>
class SaliencyModel : public Module<T> {
 public:
  explicit SaliencyModel(const ModelConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.init_seed);
    encoder_ = std::make_unique<VisualEncoder<T>>(cfg.encoder, rng);
    topdown_ = std::make_unique<TopDownFusion<T>>(cfg.encoder.base_channels, cfg.fused_channels,
                                                  cfg.f1_adds_f3, rng);
    blocks_ = std::make_unique<BlockStack<T>>(parse_placement(cfg.placement), cfg.fused_channels,
                                              cfg.tokens, cfg.shift, rng);
    this->register_module("encoder", encoder_.get());
    this->register_module("topdown", topdown_.get());
    this->register_module("blocks", blocks_.get());
    if (cfg.use_audio) {
      audio_ = std::make_unique<AudioBranch<T>>(cfg, rng);
      this->register_module("audio", audio_.get());
      for (std::size_t i = 0; i < 4; ++i) {
        if (!cfg.fusion_levels[i]) continue;
        fusion_[i] = std::make_unique<Fusion<T>>(cfg.fusion, cfg.fused_channels, cfg.audio_dim,
                                                 static_cast<T>(cfg.max_offset), rng);
        this->register_module("fusion.level" + std::to_string(i + 1), fusion_[i].get());
      }
    }
    decoder_ = std::make_unique<Decoder<T>>(cfg.decoder, cfg.fused_channels,
                                            cfg.decoder_min_channels, rng);
    this->register_module("decoder", decoder_.get());
  }

  /// clip: [N, 3, T, H, W]; audio: one [T_a, 1, H_a, W_a] stack per sample
  /// (ignored without an audio branch). `mute` replaces the audio features by
  /// zeros.
  ModelOutput<T> forward(const Tensor<T>& clip, const std::vector<Tensor<T>>& audio = {},
                         bool mute = false) {
    ModelOutput<T> out;
    auto levels = (*blocks_)((*topdown_)((*encoder_)(clip)));
    if (audio_) {
      const std::size_t N = clip.dim(0), steps = clip.dim(2) / 2;
      Tensor<T> a;
      if (mute) {
        a = Tensor<T>({N, steps, cfg_.audio_dim}, T(0));
      } else {
        if (audio.size() != N) throw ShapeError("model: expected one audio stack per sample");
        std::vector<Tensor<T>> per;
        for (auto& s : audio) per.push_back((*audio_)(s, steps));
        a = N == 1 ? per[0] : concat(per, 0);
      }
      for (std::size_t i = 0; i < 4; ++i)
        if (fusion_[i]) levels[i] = (*fusion_[i])(levels[i], a);
    }
    out.refined = levels;
    auto dec = (*decoder_)(levels);
    out.saliency = dec.saliency;
    out.levels = std::move(dec.levels);
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  VisualEncoder<T>& encoder() { return *encoder_; }
  TopDownFusion<T>& topdown() { return *topdown_; }
  BlockStack<T>& blocks() { return *blocks_; }
  AudioBranch<T>* audio() { return audio_.get(); }
  Fusion<T>* fusion(std::size_t i) { return fusion_.at(i).get(); }
  Decoder<T>& decoder() { return *decoder_; }

  /// Parameters of the audio branch and fusion blocks only.
  std::vector<std::pair<std::string, Tensor<T>>> audio_fusion_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (auto& [n, t] : this->named_parameters())
      if (n.rfind("audio.", 0) == 0 || n.rfind("fusion.", 0) == 0) out.emplace_back(n, t);
    return out;
  }

 private:
  ModelConfig cfg_;
  std::unique_ptr<VisualEncoder<T>> encoder_;
  std::unique_ptr<TopDownFusion<T>> topdown_;
  std::unique_ptr<BlockStack<T>> blocks_;
  std::unique_ptr<AudioBranch<T>> audio_;
  std::array<std::unique_ptr<Fusion<T>>, 4> fusion_;
  std::unique_ptr<Decoder<T>> decoder_;
};

/// [T, H, W, 3] frames in [0, 1] -> [1, 3, T, H, W].
template <class T>
Tensor<T> clip_to_tensor(const std::vector<double>& frames_thwc, std::size_t Tn, std::size_t H,
                         std::size_t W) {
  if (frames_thwc.size() != Tn * H * W * 3) throw ShapeError("clip: size mismatch");
  std::vector<T> v(frames_thwc.size());
  for (std::size_t t = 0; t < Tn; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          v[((c * Tn + t) * H + y) * W + x] = static_cast<T>(frames_thwc[((t * H + y) * W + x) * 3 + c]);
  return Tensor<T>({1, 3, Tn, H, W}, std::move(v));
}

}  // namespace avsal
