#pragma once

#include <array>
#include <memory>
#include <string>

#include "avsal/module.hpp"

namespace avsal {

/// `steps` x [Conv3x3x3 (temporal stride 2 while T > 1) -> ReLU -> x2 spatial
/// upsampling], halving channels down to `min_channels`; then mean over the
/// remaining frames, a 1x1x1 conv to one channel and a sigmoid.
template <class T>
class DecodeStack : public Module<T> {
 public:
  DecodeStack(std::size_t channels, std::size_t steps, std::size_t min_channels, Rng& rng) {
    std::size_t c = channels;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t next = std::max(c / 2, std::min(min_channels, c));
      weights_.push_back(this->register_parameter(
          "conv" + std::to_string(s) + ".weight",
          rng.uniform_tensor<T>({next, c, 3, 3, 3}, 1.0 / std::sqrt(27.0 * static_cast<double>(c)))));
      biases_.push_back(this->register_parameter(
          "conv" + std::to_string(s) + ".bias",
          rng.uniform_tensor<T>({next}, 1.0 / std::sqrt(27.0 * static_cast<double>(c)))));
      c = next;
    }
    head_ = std::make_unique<Conv3d<T>>(ConvSpec{c, 1}, rng);
    this->register_module("head", head_.get());
  }

  /// Pre-sigmoid map [N, 1, 1, H', W'].
  Tensor<T> logits(const Tensor<T>& x) const {
    Tensor<T> y = x;
    for (std::size_t s = 0; s < weights_.size(); ++s) {
      const std::size_t st = y.dim(2) > 1 ? 2 : 1;
      y = trilinear_upsample(relu(conv3d(y, weights_[s], biases_[s], {st, 1, 1}, {1, 1, 1})), {1, 2, 2});
    }
    return (*head_)(mean(y, {2}, true));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return sigmoid(logits(x)); }

  std::size_t steps() const { return weights_.size(); }
  Conv3d<T>& head() { return *head_; }

 private:
  std::vector<Tensor<T>> weights_, biases_;
  std::unique_ptr<Conv3d<T>> head_;
};

template <class T>
struct DecoderOutput {
  Tensor<T> saliency;              // [N, 1, 1, H, W]
  std::vector<Tensor<T>> levels;   // intermediate maps, multi mode only
};

/// Four independent level decoders (level i upsamples by 2^(i+1)), fused by
/// S = sigmoid(Conv1x3x3([s1; s2; s3; s4])).
template <class T>
class MultiDecoder : public Module<T> {
 public:
  MultiDecoder(std::size_t channels, std::size_t min_channels, Rng& rng)
      : fuse_({4, 1, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true}, rng) {
    for (std::size_t i = 0; i < 4; ++i) {
      levels_[i] = std::make_unique<DecodeStack<T>>(channels, i + 2, min_channels, rng);
      this->register_module("level" + std::to_string(i + 1), levels_[i].get());
    }
    this->register_module("fuse", &fuse_);
  }

  Tensor<T> fuse(const std::vector<Tensor<T>>& maps) const {
    for (auto& m : maps) {
      if (m.shape() != maps[0].shape()) throw ShapeError("fuse: intermediate maps differ in shape");
    }
    return sigmoid(fuse_(concat(maps, 1)));
  }

  DecoderOutput<T> operator()(const std::array<Tensor<T>, 4>& f) const {
    DecoderOutput<T> out;
    for (std::size_t i = 0; i < 4; ++i) out.levels.push_back((*levels_[i])(f[i]));
    out.saliency = fuse(out.levels);
    return out;
  }

  DecodeStack<T>& level(std::size_t i) { return *levels_.at(i); }
  Conv3d<T>& fuse_conv() { return fuse_; }

 private:
  std::array<std::unique_ptr<DecodeStack<T>>, 4> levels_;
  Conv3d<T> fuse_;
};

/// All levels upsampled to the finest scale, concatenated, reduced by a
/// 1x1x1 conv and decoded by a single stack.
template <class T>
class OneDecoder : public Module<T> {
 public:
  OneDecoder(std::size_t channels, std::size_t min_channels, Rng& rng)
      : reduce_({4 * channels, channels}, rng), stack_(channels, 2, min_channels, rng) {
    this->register_module("reduce", &reduce_);
    this->register_module("stack", &stack_);
  }
  DecoderOutput<T> operator()(const std::array<Tensor<T>, 4>& f) const {
    std::vector<Tensor<T>> parts{f[0]};
    for (std::size_t i = 1; i < 4; ++i) {
      const std::size_t s = std::size_t{1} << i;
      parts.push_back(trilinear_upsample(f[i], {1, s, s}));
    }
    return {stack_(relu(reduce_(concat(parts, 1)))), {}};
  }

 private:
  Conv3d<T> reduce_;
  DecodeStack<T> stack_;
};

/// Coarse-to-fine path: x = ReLU(Conv3x3x3([U2(x); F_i])) for i = 3, 2, 1,
/// then a two-step stack to full resolution.
template <class T>
class UNetDecoder : public Module<T> {
 public:
  UNetDecoder(std::size_t channels, std::size_t min_channels, Rng& rng)
      : stack_(channels, 2, min_channels, rng) {
    for (std::size_t i = 0; i < 3; ++i) {
      merge_[i] = std::make_unique<Conv3d<T>>(
          ConvSpec{2 * channels, channels, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true}, rng);
      this->register_module("merge" + std::to_string(i + 1), merge_[i].get());
    }
    this->register_module("stack", &stack_);
  }
  DecoderOutput<T> operator()(const std::array<Tensor<T>, 4>& f) const {
    Tensor<T> x = f[3];
    for (std::size_t i = 3; i-- > 0;) {
      x = relu((*merge_[i])(concat<T>({trilinear_upsample(x, {1, 2, 2}), f[i]}, 1)));
    }
    return {stack_(x), {}};
  }

 private:
  std::array<std::unique_ptr<Conv3d<T>>, 3> merge_;
  DecodeStack<T> stack_;
};

enum class DecoderMode { kMulti, kOne, kUNet };

inline DecoderMode parse_decoder_mode(const std::string& s) {
  if (s == "multi") return DecoderMode::kMulti;
  if (s == "one") return DecoderMode::kOne;
  if (s == "unet") return DecoderMode::kUNet;
  throw ConfigError("model.decoder", "unknown decoder mode '" + s + "'");
}

inline std::string to_string(DecoderMode m) {
  switch (m) {
    case DecoderMode::kOne: return "one";
    case DecoderMode::kUNet: return "unet";
    default: return "multi";
  }
}

template <class T>
class Decoder : public Module<T> {
 public:
  Decoder(DecoderMode mode, std::size_t channels, std::size_t min_channels, Rng& rng) : mode_(mode) {
    switch (mode) {
      case DecoderMode::kMulti:
        multi_ = std::make_unique<MultiDecoder<T>>(channels, min_channels, rng);
        this->register_module("multi", multi_.get());
        break;
      case DecoderMode::kOne:
        one_ = std::make_unique<OneDecoder<T>>(channels, min_channels, rng);
        this->register_module("one", one_.get());
        break;
      case DecoderMode::kUNet:
        unet_ = std::make_unique<UNetDecoder<T>>(channels, min_channels, rng);
        this->register_module("unet", unet_.get());
        break;
    }
  }
  DecoderOutput<T> operator()(const std::array<Tensor<T>, 4>& f) const {
    if (multi_) return (*multi_)(f);
    if (one_) return (*one_)(f);
    return (*unet_)(f);
  }
  DecoderMode mode() const { return mode_; }
  MultiDecoder<T>* multi() { return multi_.get(); }

 private:
  DecoderMode mode_;
  std::unique_ptr<MultiDecoder<T>> multi_;
  std::unique_ptr<OneDecoder<T>> one_;
  std::unique_ptr<UNetDecoder<T>> unet_;
};

}  // namespace avsal
