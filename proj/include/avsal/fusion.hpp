#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>

#include "avsal/module.hpp"

namespace avsal {

/// Conv1xkxk -> BatchNorm -> ReLU, spatially shape-preserving.
template <class T>
class ConvBnRelu : public Module<T> {
 public:
  ConvBnRelu(std::size_t channels, std::size_t k, Rng& rng)
      : conv_({channels, channels, {1, k, k}, {1, 1, 1}, {0, k / 2, k / 2}, true}, rng), bn_(channels) {
    this->register_module("conv", &conv_);
    this->register_module("bn", &bn_);
  }
  Tensor<T> pre_activation(const Tensor<T>& x) { return bn_(conv_(x)); }
  Tensor<T> operator()(const Tensor<T>& x) { return relu(pre_activation(x)); }
  Conv3d<T>& conv() { return conv_; }
  BatchNorm3d<T>& bn() { return bn_; }

 private:
  Conv3d<T> conv_;
  BatchNorm3d<T> bn_;
};

/// [N, T, D] audio steps -> [N, D, T, 1, 1], broadcastable over H and W.
template <class T>
Tensor<T> audio_as_volume(const Tensor<T>& a) {
  return reshape(permute(a, {0, 2, 1}), {a.dim(0), a.dim(2), a.dim(1), 1, 1});
}

template <class T>
void check_audio_steps(const Tensor<T>& f, const Tensor<T>& audio) {
  if (audio.ndim() != 3 || audio.dim(0) != f.dim(0) || audio.dim(1) != f.dim(2)) {
    throw ShapeError("fusion: audio " + to_string(audio.shape()) + " not aligned with features " +
                     to_string(f.shape()));
  }
}

/// Audio-conditioned deformable stream:
///   Z = F + tile(Linear(a_t)),  offsets = Conv1x3x3(Z),  out = DeformConv3x3(Z, offsets)
/// A positive `max_offset` bounds offsets smoothly by max_offset * tanh(o / max_offset).
template <class T>
class AdaptiveStream : public Module<T> {
 public:
  AdaptiveStream(std::size_t channels, std::size_t audio_dim, T max_offset, Rng& rng)
      : audio_proj_(audio_dim, channels, rng),
        offset_({channels, 18, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true}, rng),
        max_offset_(max_offset) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels * 9));
    weight_ = this->register_parameter("weight", rng.uniform_tensor<T>({channels, channels, 1, 3, 3}, bound));
    bias_ = this->register_parameter("bias", rng.uniform_tensor<T>({channels}, bound));
    this->register_module("audio_proj", &audio_proj_);
    this->register_module("offset", &offset_);
  }

  Tensor<T> condition(const Tensor<T>& f, const Tensor<T>& audio) const {
    check_audio_steps(f, audio);
    return f + audio_as_volume(audio_proj_(audio));
  }

  Tensor<T> offsets(const Tensor<T>& z) const {
    auto o = offset_(z);
    if (max_offset_ > T(0)) {
      // m * tanh(o / m) with tanh(x) = 2 sigmoid(2x) - 1
      o = scale(add_scalar(scale(sigmoid(scale(o, T(2) / max_offset_)), T(2)), T(-1)), max_offset_);
    }
    return o;
  }

  Tensor<T> operator()(const Tensor<T>& f, const Tensor<T>& audio) const {
    auto z = condition(f, audio);
    return deform_conv3d(z, offsets(z), weight_, bias_, {1, 1}, {1, 1});
  }

  Linear<T>& audio_proj() { return audio_proj_; }
  Conv3d<T>& offset_conv() { return offset_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Linear<T> audio_proj_;
  Conv3d<T> offset_;
  T max_offset_;
  Tensor<T> weight_, bias_;
};

template <class T>
struct AmfbTrace {
  Tensor<T> local, global, adaptive;
  Tensor<T> scores;  // [N, 3] in (0, 1)
};

/// Tri-stream fusion:
///   W = sigmoid(Linear(GAP([F_L : F_G : F_A])))   (per-sample scalars)
///   out = W_L F_L + W_G F_G + W_A F_A
template <class T>
class Amfb : public Module<T> {
 public:
  Amfb(std::size_t channels, std::size_t audio_dim, T max_offset, Rng& rng)
      : local_(channels, 3, rng),
        global_(channels, 5, rng),
        adaptive_(channels, audio_dim, max_offset, rng),
        score_(3 * channels, 3, rng) {
    this->register_module("local", &local_);
    this->register_module("global", &global_);
    this->register_module("adaptive", &adaptive_);
    this->register_module("score", &score_);
  }

  Tensor<T> operator()(const Tensor<T>& f, const Tensor<T>& audio) {
    const std::size_t N = f.dim(0);
    AmfbTrace<T> tr;
    tr.local = local_(f);
    tr.global = global_(f);
    tr.adaptive = adaptive_(f, audio);
    if (forced_) {
      std::vector<T> s;
      for (std::size_t n = 0; n < N; ++n) s.insert(s.end(), forced_->begin(), forced_->end());
      tr.scores = Tensor<T>({N, 3}, std::move(s));
    } else {
      tr.scores = sigmoid(score_(global_avg_pool(concat<T>({tr.local, tr.global, tr.adaptive}, 1))));
    }
    auto w = [&](std::size_t k) { return reshape(narrow(tr.scores, 1, k, 1), {N, 1, 1, 1, 1}); };
    auto out = w(0) * tr.local + w(1) * tr.global + w(2) * tr.adaptive;
    trace_ = std::move(tr);
    return out;
  }

  /// Replaces the learned scores, e.g. {1, 0, 0}; nullopt restores them.
  void force_scores(std::optional<std::array<T, 3>> s) { forced_ = s; }
  const AmfbTrace<T>& last_trace() const { return trace_; }

  ConvBnRelu<T>& local() { return local_; }
  ConvBnRelu<T>& global() { return global_; }
  AdaptiveStream<T>& adaptive() { return adaptive_; }
  Linear<T>& score() { return score_; }

 private:
  ConvBnRelu<T> local_;
  ConvBnRelu<T> global_;
  AdaptiveStream<T> adaptive_;
  Linear<T> score_;
  std::optional<std::array<T, 3>> forced_;
  AmfbTrace<T> trace_;
};

/// Channel concatenation of the tiled audio vector followed by a 1x1x1 projection.
template <class T>
class ConcatFusion : public Module<T> {
 public:
  ConcatFusion(std::size_t channels, std::size_t audio_dim, Rng& rng)
      : proj_({channels + audio_dim, channels}, rng) {
    this->register_module("proj", &proj_);
  }
  Tensor<T> operator()(const Tensor<T>& f, const Tensor<T>& audio) const {
    check_audio_steps(f, audio);
    const Shape& s = f.shape();
    auto a = audio_as_volume(audio);
    auto tiled = a * Tensor<T>::ones({s[0], a.dim(1), s[2], s[3], s[4]});
    return proj_(concat<T>({f, tiled}, 1));
  }
  Conv3d<T>& proj() { return proj_; }

 private:
  Conv3d<T> proj_;
};

/// Single-head cross-attention with visual queries (one per pixel and step),
/// audio keys (one per step) and visual values (the spatially pooled feature
/// of each step). out = F + Wo(attention).
template <class T>
class CrossAttentionFusion : public Module<T> {
 public:
  CrossAttentionFusion(std::size_t channels, std::size_t audio_dim, Rng& rng)
      : q_(channels, channels, rng),
        k_(audio_dim, channels, rng),
        v_(channels, channels, rng),
        o_(channels, channels, rng) {
    this->register_module("q", &q_);
    this->register_module("k", &k_);
    this->register_module("v", &v_);
    this->register_module("o", &o_);
  }

  Tensor<T> operator()(const Tensor<T>& f, const Tensor<T>& audio) {
    check_audio_steps(f, audio);
    const std::size_t N = f.dim(0), C = f.dim(1), Tt = f.dim(2), H = f.dim(3), W = f.dim(4);
    std::vector<Tensor<T>> outs;
    for (std::size_t n = 0; n < N; ++n) {
      auto fn = narrow(f, 0, n, 1);
      auto tokens = reshape(permute(fn, {0, 2, 3, 4, 1}), {Tt * H * W, C});
      auto pooled = permute(reshape(mean(fn, {3, 4}), {C, Tt}), {1, 0});  // [T, C]
      auto keys = reshape(narrow(audio, 0, n, 1), {audio.dim(1), audio.dim(2)});
      auto att = scaled_dot_attention(q_(tokens), k_(keys), v_(pooled));
      last_weights_ = att.weights;
      auto y = permute(reshape(o_(att.output), {1, Tt, H, W, C}), {0, 4, 1, 2, 3});
      outs.push_back(fn + y);
    }
    return N == 1 ? outs[0] : concat(outs, 0);
  }

  /// [T H W, T_audio] weights of the last sample.
  const Tensor<T>& last_weights() const { return last_weights_; }

 private:
  Linear<T> q_, k_, v_, o_;
  Tensor<T> last_weights_;
};

enum class FusionMode { kAmfb, kConcat, kCrossAttention };

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "amfb") return FusionMode::kAmfb;
  if (s == "concat") return FusionMode::kConcat;
  if (s == "cross_attention") return FusionMode::kCrossAttention;
  throw ConfigError("model.fusion", "unknown fusion mode '" + s + "'");
}

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kConcat: return "concat";
    case FusionMode::kCrossAttention: return "cross_attention";
    default: return "amfb";
  }
}

/// Dispatch over the three fusion variants.
template <class T>
class Fusion : public Module<T> {
 public:
  Fusion(FusionMode mode, std::size_t channels, std::size_t audio_dim, T max_offset, Rng& rng)
      : mode_(mode) {
    switch (mode) {
      case FusionMode::kAmfb:
        amfb_ = std::make_unique<Amfb<T>>(channels, audio_dim, max_offset, rng);
        this->register_module("amfb", amfb_.get());
        break;
      case FusionMode::kConcat:
        concat_ = std::make_unique<ConcatFusion<T>>(channels, audio_dim, rng);
        this->register_module("concat", concat_.get());
        break;
      case FusionMode::kCrossAttention:
        cross_ = std::make_unique<CrossAttentionFusion<T>>(channels, audio_dim, rng);
        this->register_module("cross_attention", cross_.get());
        break;
    }
  }

  Tensor<T> operator()(const Tensor<T>& f, const Tensor<T>& audio) {
    if (amfb_) return (*amfb_)(f, audio);
    if (concat_) return (*concat_)(f, audio);
    return (*cross_)(f, audio);
  }

  FusionMode mode() const { return mode_; }
  Amfb<T>* amfb() { return amfb_.get(); }
  ConcatFusion<T>* concat_fusion() { return concat_.get(); }
  CrossAttentionFusion<T>* cross_attention() { return cross_.get(); }

 private:
  FusionMode mode_;
  std::unique_ptr<Amfb<T>> amfb_;
  std::unique_ptr<ConcatFusion<T>> concat_;
  std::unique_ptr<CrossAttentionFusion<T>> cross_;
};

}  // namespace avsal
