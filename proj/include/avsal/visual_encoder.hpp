#pragma once

#include <array>
#include <memory>

#include "avsal/module.hpp"

namespace avsal {

struct EncoderConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 96;                   // C
  std::array<std::size_t, 4> blocks{1, 1, 2, 1};    // residual blocks per stage
};

using Pyramid = std::array<Shape, 4>;

/// Expected level shapes [N, 2^(i-1) C, T/2, H/2^(i+1), W/2^(i+1)].
inline Pyramid pyramid_shapes(const Shape& clip, std::size_t C) {
  if (clip.size() != 5) throw ShapeError("clip must be [N,3,T,H,W]");
  Pyramid p;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t f = std::size_t{4} << i;
    p[i] = {clip[0], C << i, clip[2] / 2, clip[3] / f, clip[4] / f};
  }
  return p;
}

inline void check_clip_shape(const Shape& clip, std::size_t in_channels) {
  if (clip.size() != 5 || clip[1] != in_channels) {
    throw ShapeError("clip must be [N," + std::to_string(in_channels) + ",T,H,W], got " +
                     to_string(clip));
  }
  if (clip[2] == 0 || clip[2] % 2 != 0) throw ShapeError("clip: T must be even and positive");
  if (clip[3] == 0 || clip[4] == 0 || clip[3] % 32 != 0 || clip[4] % 32 != 0) {
    throw ShapeError("clip: H and W must be positive multiples of 32, got " + to_string(clip));
  }
}

/// x + GELU(LN_c(Conv3x3x3(x))).
template <class T>
class ResidualBlock : public Module<T> {
 public:
  ResidualBlock(std::size_t channels, Rng& rng)
      : conv_({channels, channels, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true}, rng),
        norm_({channels}, 1, 1) {
    this->register_module("conv", &conv_);
    this->register_module("norm", &norm_);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return x + gelu(norm_(conv_(x))); }

 private:
  Conv3d<T> conv_;
  LayerNorm<T> norm_;
};

template <class T>
class Stage : public Module<T> {
 public:
  Stage(std::unique_ptr<Conv3d<T>> entry, std::size_t channels, std::size_t blocks, Rng& rng)
      : entry_(std::move(entry)) {
    this->register_module("entry", entry_.get());
    for (std::size_t b = 0; b < blocks; ++b) {
      blocks_.push_back(std::make_unique<ResidualBlock<T>>(channels, rng));
      this->register_module("block" + std::to_string(b), blocks_.back().get());
    }
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = (*entry_)(x);
    for (auto& b : blocks_) y = (*b)(y);
    return y;
  }
  Conv3d<T>& entry() { return *entry_; }

 private:
  std::unique_ptr<Conv3d<T>> entry_;
  std::vector<std::unique_ptr<ResidualBlock<T>>> blocks_;
};

/// Four-stage convolutional pyramid. Stage 1 is a (2,4,4) patch partition,
/// later stages enter through a (1,2,2) strided conv that doubles channels.
template <class T>
class VisualEncoder : public Module<T> {
 public:
  VisualEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    std::size_t c = cfg.base_channels;
    for (std::size_t i = 0; i < 4; ++i) {
      auto entry = i == 0 ? std::make_unique<Conv3d<T>>(
                                ConvSpec{cfg.in_channels, c, {2, 4, 4}, {2, 4, 4}, {0, 0, 0}, true}, rng)
                          : std::make_unique<Conv3d<T>>(
                                ConvSpec{c / 2, c, {1, 2, 2}, {1, 2, 2}, {0, 0, 0}, true}, rng);
      stages_.push_back(std::make_unique<Stage<T>>(std::move(entry), c, cfg.blocks[i], rng));
      this->register_module("stage" + std::to_string(i + 1), stages_.back().get());
      c *= 2;
    }
  }

  Tensor<T> patch_partition(const Tensor<T>& clip) const {
    check_clip_shape(clip.shape(), cfg_.in_channels);
    return stages_[0]->entry()(clip);
  }

  std::array<Tensor<T>, 4> operator()(const Tensor<T>& clip) const {
    check_clip_shape(clip.shape(), cfg_.in_channels);
    std::array<Tensor<T>, 4> out;
    Tensor<T> x = clip;
    for (std::size_t i = 0; i < 4; ++i) out[i] = x = (*stages_[i])(x);
    return out;
  }

  /// Level shapes by convolution arithmetic alone.
  Pyramid infer_shapes(const Shape& clip) const {
    check_clip_shape(clip, cfg_.in_channels);
    Pyramid p;
    Shape s = clip;
    for (std::size_t i = 0; i < 4; ++i) p[i] = s = stages_[i]->entry().output_shape(s);
    return p;
  }

  const EncoderConfig& config() const { return cfg_; }
  Stage<T>& stage(std::size_t i) { return *stages_.at(i); }

 private:
  EncoderConfig cfg_;
  std::vector<std::unique_ptr<Stage<T>>> stages_;
};

}  // namespace avsal
