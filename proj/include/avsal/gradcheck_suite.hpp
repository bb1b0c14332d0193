#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "avsal/gradcheck.hpp"
#include "avsal/loss.hpp"
#include "avsal/model.hpp"

namespace avsal {

/// One named check; `run(seed)` draws inputs and weights from the seed.
struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

struct GradCaseReport {
  std::string name;
  std::size_t seeds = 0;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::string worst;
  bool passed = true;
  double seconds = 0.0;
};

namespace gcs {

using TD = Tensor<double>;
using Leaves = std::vector<std::pair<std::string, TD>>;

inline TD rnd(Rng& rng, Shape s, double bound = 1.0) { return rng.uniform_tensor<double>(std::move(s), bound); }

/// Inputs and every parameter of `m`. Parameters get a small random offset so
/// that zero-initialized biases do not park ReLU inputs exactly on the kink.
inline Leaves with_params(Leaves inputs, const Module<double>& m, std::uint64_t jitter_seed = 7) {
  Rng r(jitter_seed);
  for (auto& p : m.named_parameters()) {
    for (auto& v : p.second.mutable_data()) v += r.uniform(-0.05, 0.05);
    inputs.push_back(p);
  }
  return inputs;
}

inline GradCheckOptions sampled(std::uint64_t seed, std::size_t entries) {
  GradCheckOptions o;
  o.max_entries = entries;
  o.sample_seed = seed;
  return o;
}

inline TD density(Rng& rng, Shape s) {
  auto t = rnd(rng, std::move(s), 1.0);
  for (auto& v : t.mutable_data()) v = std::abs(v) + 0.05;
  return normalize_sum(t);
}

/// Smallest model that still runs every component on a valid clip.
inline ModelConfig tiny_model_config(std::uint64_t seed) {
  ModelConfig c;
  c.encoder.base_channels = 4;
  c.encoder.blocks = {1, 1, 1, 1};
  c.fused_channels = 4;
  c.tokens = {2, 2, 2};
  c.mel.sample_rate = 8000;
  c.mel.n_fft = 128;
  c.mel.hop = 64;
  c.mel.n_mels = 16;
  c.mel.f_max = 4000;
  c.mel.segment_width = 8;
  c.audio_channels = {2, 4};
  c.audio_dim = 6;
  c.decoder_min_channels = 2;
  c.init_seed = seed;
  return c;
}

}  // namespace gcs

inline std::vector<GradCheckCase> gradcheck_cases() {
  using namespace gcs;
  std::vector<GradCheckCase> cases;
  auto add = [&](std::string name, std::function<GradCheckResult(std::uint64_t)> f) {
    cases.push_back({std::move(name), std::move(f)});
  };

  add("conv3d", [](std::uint64_t s) {
    Rng r(s);
    auto x = rnd(r, {2, 2, 3, 5, 6}), w = rnd(r, {3, 2, 2, 3, 3}), b = rnd(r, {3});
    return check_gradients("conv3d", {{"x", x}, {"w", w}, {"b", b}},
                           [&] { return projected_loss(conv3d(x, w, b, {1, 2, 2}, {1, 1, 1}), s); });
  });
  add("trilinear_upsample", [](std::uint64_t s) {
    Rng r(s);
    auto x = rnd(r, {1, 2, 2, 3, 3});
    return check_gradients("trilinear_upsample", {{"x", x}}, [&] {
      return projected_loss(trilinear_upsample(x, {2, 2, 4}) + resize_trilinear(x, {4, 6, 12}), s);
    });
  });
  add("softmax", [](std::uint64_t s) {
    Rng r(s);
    auto x = rnd(r, {3, 4, 5}, 2.0);
    return check_gradients("softmax", {{"x", x}}, [&] {
      return projected_loss(softmax(x, 1) + softmax(x, 2), s);
    });
  });
  add("layer_norm", [](std::uint64_t s) {
    Rng r(s);
    auto x = rnd(r, {2, 4, 2, 2, 3}), g = rnd(r, {4}), b = rnd(r, {4});
    return check_gradients("layer_norm", {{"x", x}, {"g", g}, {"b", b}},
                           [&] { return projected_loss(layer_norm(x, 1, 1, g, b), s); });
  });
  add("batch_norm", [](std::uint64_t s) {
    Rng r(s);
    auto x = rnd(r, {2, 3, 2, 2, 3}), g = rnd(r, {3}), b = rnd(r, {3});
    BatchNormState<double> st{std::vector<double>(3, 0.0), std::vector<double>(3, 1.0)};
    return check_gradients("batch_norm", {{"x", x}, {"g", g}, {"b", b}},
                           [&] { return projected_loss(batch_norm(x, g, b, st, true), s); });
  });
  add("gelu", [](std::uint64_t s) {
    Rng r(s);
    auto x = rnd(r, {4, 6}, 3.0);
    return check_gradients("gelu", {{"x", x}}, [&] { return projected_loss(gelu(x) + sigmoid(x), s); });
  });
  add("linear", [](std::uint64_t s) {
    Rng r(s);
    auto x = rnd(r, {2, 3, 4}), w = rnd(r, {5, 4}), b = rnd(r, {5});
    return check_gradients("linear", {{"x", x}, {"w", w}, {"b", b}},
                           [&] { return projected_loss(linear(x, w, b), s); });
  });
  add("attention", [](std::uint64_t s) {
    Rng r(s);
    auto q = rnd(r, {3, 4}), k = rnd(r, {5, 4}), v = rnd(r, {5, 3});
    return check_gradients("attention", {{"q", q}, {"k", k}, {"v", v}},
                           [&] { return projected_loss(scaled_dot_attention(q, k, v).output, s); });
  });
  add("deform_conv", [](std::uint64_t s) {
    Rng r(s);
    auto x = rnd(r, {1, 2, 2, 4, 5}), w = rnd(r, {2, 2, 1, 3, 3}), b = rnd(r, {2});
    auto off = rnd(r, {1, 18, 2, 4, 5}, 1.3);
    return check_gradients("deform_conv", {{"x", x}, {"off", off}, {"w", w}, {"b", b}}, [&] {
      return projected_loss(deform_conv3d(x, off, w, b, {1, 1}, {1, 1}), s);
    });
  });
  add("channel_shift", [](std::uint64_t s) {
    Rng r(s);
    auto x = rnd(r, {1, 5, 2, 3, 4});
    return check_gradients("channel_shift", {{"x", x}}, [&] {
      auto y = channel_group_shift(x, 4, {-1, 0, 1}, ShiftBoundary::kCyclic);
      return projected_loss(channel_group_shift(y, 3, {1, 0, -1}, ShiftBoundary::kZero), s);
    });
  });
  add("topdown", [](std::uint64_t s) {
    Rng r(s);
    TopDownFusion<double> m(2, 3, true, r);
    std::array<TD, 4> e{rnd(r, {1, 2, 1, 8, 8}), rnd(r, {1, 4, 1, 4, 4}), rnd(r, {1, 8, 1, 2, 2}),
                        rnd(r, {1, 16, 1, 1, 1})};
    return check_gradients("topdown", with_params({{"e1", e[0]}, {"e4", e[3]}}, m), [&] {
      auto o = m(e);
      return projected_loss(o[0], s) + projected_loss(o[3], s + 1);
    }, sampled(s, 12));
  });
  add("lteb", [](std::uint64_t s) {
    Rng r(s);
    Lteb<double> m(3, {3, 2, 2}, r);
    auto x = rnd(r, {1, 3, 2, 4, 4});
    return check_gradients("lteb", with_params({{"x", x}}, m), [&] { return projected_loss(m(x), s); },
                           sampled(s, 16));
  });
  add("dltfb", [](std::uint64_t s) {
    Rng r(s);
    Dltfb<double> m(4, {3, 2, 2}, {}, r);
    auto x = rnd(r, {1, 4, 2, 4, 4});
    return check_gradients("dltfb", with_params({{"x", x}}, m), [&] { return projected_loss(m(x), s); },
                           sampled(s, 12));
  });
  add("amfb", [](std::uint64_t s) {
    Rng r(s);
    Amfb<double> m(3, 4, 0.0, r);
    auto x = rnd(r, {1, 3, 2, 4, 4}), a = rnd(r, {1, 2, 4});
    return check_gradients("amfb", with_params({{"x", x}, {"audio", a}}, m),
                           [&] { return projected_loss(m(x, a), s); }, sampled(s, 12));
  });
  add("fusion_concat", [](std::uint64_t s) {
    Rng r(s);
    ConcatFusion<double> m(3, 4, r);
    auto x = rnd(r, {1, 3, 2, 4, 4}), a = rnd(r, {1, 2, 4});
    return check_gradients("fusion_concat", with_params({{"x", x}, {"audio", a}}, m),
                           [&] { return projected_loss(m(x, a), s); });
  });
  add("fusion_cross_attention", [](std::uint64_t s) {
    Rng r(s);
    CrossAttentionFusion<double> m(3, 4, r);
    auto x = rnd(r, {1, 3, 2, 4, 4}), a = rnd(r, {1, 2, 4});
    return check_gradients("fusion_cross_attention", with_params({{"x", x}, {"audio", a}}, m),
                           [&] { return projected_loss(m(x, a), s); }, sampled(s, 12));
  });
  add("audio_branch", [](std::uint64_t s) {
    Rng r(s);
    AudioEncoder<double> enc({2, 3}, r);
    const auto fs = enc.feature_shape(8, 6);
    TemporalEnhancer<double> te(fs[0] * fs[1] * fs[2], 5, r);
    auto seg = rnd(r, {3, 1, 8, 6});
    auto leaves = with_params(with_params({{"segments", seg}}, enc), te);
    return check_gradients("audio_branch", leaves,
                           [&] { return projected_loss(align_audio(te(enc(seg)), 4), s); }, sampled(s, 10));
  });
  add("encoder", [](std::uint64_t s) {
    Rng r(s);
    VisualEncoder<double> m({3, 2, {1, 1, 0, 1}}, r);
    auto x = rnd(r, {1, 3, 2, 32, 32});
    return check_gradients("encoder", with_params({{"clip", x}}, m), [&] {
      auto e = m(x);
      return projected_loss(e[0], s) + projected_loss(e[3], s + 1);
    }, sampled(s, 8));
  });
  for (auto mode : {DecoderMode::kMulti, DecoderMode::kOne, DecoderMode::kUNet}) {
    const std::string name = "decoder_" + to_string(mode);
    add(name, [mode, name](std::uint64_t s) {
      Rng r(s);
      Decoder<double> m(mode, 4, 2, r);
      std::array<TD, 4> f{rnd(r, {1, 4, 1, 8, 8}), rnd(r, {1, 4, 1, 4, 4}), rnd(r, {1, 4, 1, 2, 2}),
                          rnd(r, {1, 4, 1, 1, 1})};
      return check_gradients(name, with_params({{"f1", f[0]}, {"f2", f[1]}, {"f4", f[3]}}, m),
                             [&] { return projected_loss(m(f).saliency, s); }, sampled(s, 12));
    });
  }
  for (auto form : {KlForm::kPrinted, KlForm::kTextbook}) {
    const std::string name = form == KlForm::kPrinted ? "loss_kl" : "loss_kl_textbook";
    add(name, [form, name](std::uint64_t s) {
      Rng r(s);
      auto gt = density(r, {1, 1, 1, 4, 5});
      auto x = rnd(r, {1, 1, 1, 4, 5}, 2.0);
      return check_gradients(name, {{"x", x}},
                             [&] { return kl_div(gt, normalize_sum(sigmoid(x)), 1e-7, form); });
    });
  }
  add("loss_cc", [](std::uint64_t s) {
    Rng r(s);
    auto gt = density(r, {1, 1, 1, 4, 5});
    auto x = rnd(r, {1, 1, 1, 4, 5}, 2.0);
    return check_gradients("loss_cc", {{"x", x}}, [&] { return cc(gt, sigmoid(x)); });
  });
  add("loss_composite", [](std::uint64_t s) {
    Rng r(s);
    auto gt = density(r, {1, 1, 1, 4, 5});
    auto x = rnd(r, {1, 1, 1, 4, 5}, 2.0);
    return check_gradients("loss_composite", {{"x", x}}, [&] { return composite_loss(gt, sigmoid(x)); });
  });
  add("full_model", [](std::uint64_t s) {
    SaliencyModel<double> m(tiny_model_config(s));
    Rng r(s + 101);
    auto clip = rnd(r, {1, 3, 2, 32, 32});
    auto audio = rnd(r, {2, 1, 16, 8});
    auto gt = density(r, {1, 1, 1, 32, 32});
    return check_gradients("full_model", with_params({{"clip", clip}, {"audio", audio}}, m), [&] {
      return composite_loss(gt, m.forward(clip, {audio}).saliency);
    }, sampled(s, 2));
  });
  return cases;
}

/// Runs every case whose name contains `filter` once per seed in [first_seed, first_seed + seeds).
inline std::vector<GradCaseReport> run_gradcheck_suite(const std::string& filter, std::uint64_t first_seed,
                                                      std::size_t seeds,
                                                      const std::function<void(const GradCaseReport&)>& on_case = {}) {
  std::vector<GradCaseReport> out;
  for (auto& c : gradcheck_cases()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    GradCaseReport rep;
    rep.name = c.name;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < seeds; ++k) {
      const auto r = c.run(first_seed + k);
      ++rep.seeds;
      rep.entries += r.entries_checked;
      if (r.max_rel_error >= rep.max_rel_error) {
        rep.max_rel_error = r.max_rel_error;
        char vals[96];
        std::snprintf(vals, sizeof vals, " (analytic %.6e, numeric %.6e)", r.worst_analytic, r.worst_numeric);
        rep.worst = "seed " + std::to_string(first_seed + k) + " " + r.worst + vals;
      }
      rep.passed = rep.passed && r.passed && r.entries_checked > 0;
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_case) on_case(rep);
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace avsal
