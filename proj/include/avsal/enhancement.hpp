#pragma once

#include <array>
#include <memory>
#include <sstream>
#include <string>

#include "avsal/module.hpp"

namespace avsal {

/// Lateral projections to C*, coarse-to-fine injection by trilinear
/// upsampling, then 1x3x3 refinement:
///   R4 = P4(E4)
///   F3 = P3(E3) + U2(R4)
///   F2 = P2(E2) + U2(F3) + U4(R4)
///   F1 = P1(E1) + U2(F2) + U8(R4)   [+ U4(F3) when f1_adds_f3]
///   Ri = Conv(Fi), i = 3, 2, 1
template <class T>
class TopDownFusion : public Module<T> {
 public:
  TopDownFusion(std::size_t base_channels, std::size_t fused, bool f1_adds_f3, Rng& rng)
      : f1_adds_f3_(f1_adds_f3) {
    for (std::size_t i = 0; i < 4; ++i) {
      lateral_[i] = std::make_unique<Conv3d<T>>(ConvSpec{base_channels << i, fused}, rng);
      this->register_module("lateral" + std::to_string(i + 1), lateral_[i].get());
    }
    for (std::size_t i = 0; i < 3; ++i) {
      refine_[i] = std::make_unique<Conv3d<T>>(
          ConvSpec{fused, fused, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true}, rng);
      this->register_module("refine" + std::to_string(i + 1), refine_[i].get());
    }
  }

  std::array<Tensor<T>, 4> operator()(const std::array<Tensor<T>, 4>& e) const {
    auto up = [](const Tensor<T>& x, std::size_t f) { return trilinear_upsample(x, {1, f, f}); };
    std::array<Tensor<T>, 4> r;
    r[3] = (*lateral_[3])(e[3]);
    auto f3 = (*lateral_[2])(e[2]) + up(r[3], 2);
    auto f2 = (*lateral_[1])(e[1]) + up(f3, 2) + up(r[3], 4);
    auto f1 = (*lateral_[0])(e[0]) + up(f2, 2) + up(r[3], 8);
    if (f1_adds_f3_) f1 = f1 + up(f3, 4);
    r[2] = (*refine_[2])(f3);
    r[1] = (*refine_[1])(f2);
    r[0] = (*refine_[0])(f1);
    return r;
  }

  Conv3d<T>& lateral(std::size_t i) { return *lateral_.at(i); }
  Conv3d<T>& refine(std::size_t i) { return *refine_.at(i); }

 private:
  bool f1_adds_f3_;
  std::array<std::unique_ptr<Conv3d<T>>, 4> lateral_;
  std::array<std::unique_ptr<Conv3d<T>>, 3> refine_;  // index i refines level i+1
};

struct TokenConfig {
  std::size_t count = 8;   // N
  std::size_t height = 7;  // H_p
  std::size_t width = 7;   // W_p
};

/// N learnable maps [C*, H_p, W_p], stored as one [N, C* H_p W_p] parameter.
template <class T>
class TokenBank : public Module<T> {
 public:
  TokenBank(std::size_t channels, const TokenConfig& cfg, Rng& rng) : channels_(channels), cfg_(cfg) {
    if (cfg.count == 0) throw ConfigError("model.tokens", "token count must be at least 1");
    tokens_ = this->register_parameter(
        "tokens", rng.uniform_tensor<T>({cfg.count, channels * cfg.height * cfg.width}, 1.0));
  }
  Tensor<T>& tokens() { return tokens_; }
  const Tensor<T>& tokens() const { return tokens_; }
  std::size_t channels() const { return channels_; }
  const TokenConfig& config() const { return cfg_; }

 private:
  std::size_t channels_;
  TokenConfig cfg_;
  Tensor<T> tokens_;
};

/// Token modulation shared by both blocks:
///   G = sigmoid(Conv1x3x3(F)), E(t) = mean_{h,w} G
///   w(t) = softmax(Linear(E(t))), K(t) = sum_i w_i(t) P_i
///   P'' = Conv1x3x3(Interpolate(K))
template <class T>
class TokenModulation : public Module<T> {
 public:
  TokenModulation(std::size_t channels, const TokenConfig& cfg, Rng& rng)
      : gate_({channels, channels, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true}, rng),
        score_(channels, cfg.count, rng),
        bank_(channels, cfg, rng),
        out_({channels, channels, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true}, rng) {
    this->register_module("gate", &gate_);
    this->register_module("score", &score_);
    this->register_module("bank", &bank_);
    this->register_module("out", &out_);
  }

  Tensor<T> operator()(const Tensor<T>& f) {
    const std::size_t N = f.dim(0), C = f.dim(1), Tt = f.dim(2), H = f.dim(3), W = f.dim(4);
    const auto& tc = bank_.config();
    auto g = sigmoid(gate_(f));
    auto e = permute(mean(g, {3, 4}), {0, 2, 1});  // [N, T, C]
    weights_ = softmax(score_(e), 2);                // [N, T, N_tok]
    auto k = matmul(reshape(weights_, {N * Tt, tc.count}), bank_.tokens());
    k = permute(reshape(k, {N, Tt, C, tc.height, tc.width}), {0, 2, 1, 3, 4});
    return out_(resize_trilinear(k, {Tt, H, W}));
  }

  /// Token weights from the last call, [N, T, N_tok].
  const Tensor<T>& last_weights() const { return weights_; }
  Conv3d<T>& out_conv() { return out_; }
  TokenBank<T>& bank() { return bank_; }

 private:
  Conv3d<T> gate_;
  Linear<T> score_;
  TokenBank<T> bank_;
  Conv3d<T> out_;
  Tensor<T> weights_;
};

/// F * P'' + F.
template <class T>
class Lteb : public Module<T> {
 public:
  Lteb(std::size_t channels, const TokenConfig& cfg, Rng& rng) : mod_(channels, cfg, rng) {
    this->register_module("tokens", &mod_);
  }
  Tensor<T> operator()(const Tensor<T>& f) { return f * mod_(f) + f; }
  TokenModulation<T>& modulation() { return mod_; }

 private:
  TokenModulation<T> mod_;
};

struct ShiftConfig {
  std::vector<int> displacements{-1, 0, 1};
  ShiftBoundary boundary = ShiftBoundary::kCyclic;
};

/// Y = Conv3x3x3(GELU(Conv1x1x1(shift_w(F))))
/// F^Sh = F + Conv1x1x1(LN(shift_h(Y)))
/// out = F * P'' + F^Sh
template <class T>
class Dltfb : public Module<T> {
 public:
  Dltfb(std::size_t channels, const TokenConfig& tokens, const ShiftConfig& shift, Rng& rng)
      : shift_(shift),
        mix_({channels, channels}, rng),
        conv_({channels, channels, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true}, rng),
        norm_({channels}, 1, 1),
        proj_({channels, channels}, rng),
        mod_(channels, tokens, rng) {
    this->register_module("mix", &mix_);
    this->register_module("conv", &conv_);
    this->register_module("norm", &norm_);
    this->register_module("proj", &proj_);
    this->register_module("tokens", &mod_);
  }

  Tensor<T> shift_branch(const Tensor<T>& f) const {
    auto fs = channel_group_shift(f, 4, shift_.displacements, shift_.boundary);
    auto y = conv_(gelu(mix_(fs)));
    auto ys = channel_group_shift(y, 3, shift_.displacements, shift_.boundary);
    return f + proj_(norm_(ys));
  }

  Tensor<T> operator()(const Tensor<T>& f) { return f * mod_(f) + shift_branch(f); }

  TokenModulation<T>& modulation() { return mod_; }
  Conv3d<T>& mix() { return mix_; }
  Conv3d<T>& conv() { return conv_; }
  Conv3d<T>& proj() { return proj_; }
  const ShiftConfig& shift() const { return shift_; }

 private:
  ShiftConfig shift_;
  Conv3d<T> mix_;
  Conv3d<T> conv_;
  LayerNorm<T> norm_;
  Conv3d<T> proj_;
  TokenModulation<T> mod_;
};

enum class BlockKind { kNone, kLteb, kDltfb };

using Placement = std::array<BlockKind, 4>;

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::kLteb: return "LTEB";
    case BlockKind::kDltfb: return "DLTFB";
    default: return "none";
  }
}

/// "none", or ';'-separated "KIND:stages" groups, e.g. "LTEB:1,2,3,4;DLTFB:4".
/// Later groups override earlier ones on shared stages. A group without a
/// kind ("2,3,4") places LTEB.
inline Placement parse_placement(const std::string& text) {
  Placement p{BlockKind::kNone, BlockKind::kNone, BlockKind::kNone, BlockKind::kNone};
  if (text == "none" || text.empty()) return p;
  std::stringstream groups(text);
  std::string group;
  while (std::getline(groups, group, ';')) {
    auto colon = group.find(':');
    if (colon == std::string::npos) {
      group = "LTEB:" + group;
      colon = 4;
    }
    const std::string kind = group.substr(0, colon);
    BlockKind k;
    if (kind == "LTEB") k = BlockKind::kLteb;
    else if (kind == "DLTFB") k = BlockKind::kDltfb;
    else if (kind == "none") k = BlockKind::kNone;
    else throw ConfigError("model.placement", "unknown block '" + kind + "'");
    std::stringstream stages(group.substr(colon + 1));
    if (colon + 1 == group.size()) throw ConfigError("model.placement", "no stages listed for '" + kind + "'");
    std::string id;
    while (std::getline(stages, id, ',')) {
      if (id.size() != 1 || id[0] < '1' || id[0] > '4') {
        throw ConfigError("model.placement", "unknown stage id '" + id + "'");
      }
      p[static_cast<std::size_t>(id[0] - '1')] = k;
    }
  }
  return p;
}

inline std::string format_placement(const Placement& p) {
  std::string out;
  for (BlockKind k : {BlockKind::kLteb, BlockKind::kDltfb}) {
    std::string ids;
    for (std::size_t i = 0; i < 4; ++i)
      if (p[i] == k) ids += (ids.empty() ? "" : ",") + std::to_string(i + 1);
    if (!ids.empty()) out += (out.empty() ? "" : ";") + to_string(k) + ":" + ids;
  }
  return out.empty() ? "none" : out;
}

/// One optional block per pyramid level.
template <class T>
class BlockStack : public Module<T> {
 public:
  BlockStack(const Placement& placement, std::size_t channels, const TokenConfig& tokens,
             const ShiftConfig& shift, Rng& rng)
      : placement_(placement) {
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string name = "level" + std::to_string(i + 1);
      if (placement[i] == BlockKind::kLteb) {
        lteb_[i] = std::make_unique<Lteb<T>>(channels, tokens, rng);
        this->register_module(name, lteb_[i].get());
      } else if (placement[i] == BlockKind::kDltfb) {
        dltfb_[i] = std::make_unique<Dltfb<T>>(channels, tokens, shift, rng);
        this->register_module(name, dltfb_[i].get());
      }
    }
  }

  std::array<Tensor<T>, 4> operator()(const std::array<Tensor<T>, 4>& levels) {
    std::array<Tensor<T>, 4> out;
    for (std::size_t i = 0; i < 4; ++i) {
      if (lteb_[i]) out[i] = (*lteb_[i])(levels[i]);
      else if (dltfb_[i]) out[i] = (*dltfb_[i])(levels[i]);
      else out[i] = levels[i];
    }
    return out;
  }

  const Placement& placement() const { return placement_; }
  std::size_t count(BlockKind k) const {
    return static_cast<std::size_t>(std::count(placement_.begin(), placement_.end(), k));
  }
  Lteb<T>* lteb(std::size_t i) { return lteb_.at(i).get(); }
  Dltfb<T>* dltfb(std::size_t i) { return dltfb_.at(i).get(); }

 private:
  Placement placement_;
  std::array<std::unique_ptr<Lteb<T>>, 4> lteb_;
  std::array<std::unique_ptr<Dltfb<T>>, 4> dltfb_;
};

}  // namespace avsal
