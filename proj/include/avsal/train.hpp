#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "avsal/loss.hpp"
#include "avsal/metrics.hpp"
#include "avsal/model.hpp"
#include "avsal/optim.hpp"
#include "avsal/synthetic.hpp"

namespace avsal {

enum class Phase { kFull, kVisual, kTwoPhase };

inline Phase parse_phase(const std::string& s) {
  if (s == "full") return Phase::kFull;
  if (s == "visual") return Phase::kVisual;
  if (s == "two_phase") return Phase::kTwoPhase;
  throw ConfigError("train.phase", "unknown phase '" + s + "'");
}

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::kVisual: return "visual";
    case Phase::kTwoPhase: return "two_phase";
    default: return "full";
  }
}

struct TrainConfig {
  double lr = 1e-4;
  double lr_factor = 0.1;
  std::size_t lr_every = 3;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  std::size_t batch_size = 1;
  LossConfig loss;
  Phase phase = Phase::kFull;
  bool freeze_visual = false;  // full phase: train only audio and fusion parameters
  std::size_t visual_epochs = 0;  // two_phase: epochs of the visual-only phase (0 = epochs)
  std::uint64_t seed = 0;         // sample order
};

struct DataConfig {
  SyntheticConfig synth;
  std::size_t train_samples = 200;
  std::size_t val_samples = 40;
  std::uint64_t seed = 1;
};

/// Training split uses data.seed, validation data.seed + 1.
inline std::vector<SyntheticSample> synthetic_split(const DataConfig& d, bool validation) {
  return validation ? generate_synthetic(d.synth, d.val_samples, d.seed + 1)
                    : generate_synthetic(d.synth, d.train_samples, d.seed);
}

template <class T>
struct PreparedSample {
  Tensor<T> clip;    // [1, 3, T, H, W]
  Tensor<T> audio;   // [T_a, 1, H_a, W_a]
  Tensor<T> gt;      // [1, 1, 1, H, W] density
  std::vector<double> density, fixations;
  bool audio_decides = false;
};

template <class T>
std::vector<PreparedSample<T>> prepare_samples(const std::vector<SyntheticSample>& raw,
                                               const SyntheticConfig& sc, const MelConfig& mel) {
  std::vector<PreparedSample<T>> out;
  out.reserve(raw.size());
  for (const auto& s : raw) {
    PreparedSample<T> p;
    std::vector<T> v(s.video.begin(), s.video.end());
    p.clip = Tensor<T>({1, 3, sc.frames, sc.height, sc.width}, std::move(v));
    p.audio = stft_logmel<T>(s.audio, mel).segments;
    p.gt = Tensor<T>({1, 1, 1, sc.height, sc.width}, std::vector<T>(s.density.begin(), s.density.end()));
    p.density = s.density;
    p.fixations = s.fixations;
    p.audio_decides = s.audio_decides;
    out.push_back(std::move(p));
  }
  return out;
}

/// Saliency map of one sample as doubles.
template <class T>
std::vector<double> predict_map(SaliencyModel<T>& model, const PreparedSample<T>& s, bool mute = false) {
  NoGradGuard<T> guard;
  auto out = model.forward(s.clip, {s.audio}, mute);
  return {out.saliency.data().begin(), out.saliency.data().end()};
}

struct EvalReport {
  std::vector<metrics::Scores> per_sample;
  std::vector<bool> audio_decides;
  metrics::Scores mean;
  metrics::Scores mean_audio_decides;   // zero when the subset is empty
  metrics::Scores mean_audio_irrelevant;
  std::size_t n_audio_decides = 0;
};

inline metrics::Scores average(const std::vector<metrics::Scores>& v, const std::vector<bool>& mask,
                               bool want, bool all) {
  metrics::Scores m;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!all && mask[i] != want) continue;
    m.cc += v[i].cc;
    m.nss += v[i].nss;
    m.auc_judd += v[i].auc_judd;
    m.sim += v[i].sim;
    m.kl += v[i].kl;
    ++n;
  }
  if (n > 0) {
    const double k = static_cast<double>(n);
    m = {m.cc / k, m.nss / k, m.auc_judd / k, m.sim / k, m.kl / k};
  }
  return m;
}

template <class T>
EvalReport evaluate(SaliencyModel<T>& model, const std::vector<PreparedSample<T>>& set,
                    bool mute = false, double eps = 1e-7) {
  const bool was_training = model.training();
  model.eval();
  EvalReport r;
  for (const auto& s : set) {
    const auto pred = predict_map(model, s, mute);
    r.per_sample.push_back(metrics::evaluate(pred, s.density, s.fixations, eps));
    r.audio_decides.push_back(s.audio_decides);
    r.n_audio_decides += s.audio_decides ? 1 : 0;
  }
  r.mean = average(r.per_sample, r.audio_decides, false, true);
  r.mean_audio_decides = average(r.per_sample, r.audio_decides, true, false);
  r.mean_audio_irrelevant = average(r.per_sample, r.audio_decides, false, false);
  model.train(was_training);
  return r;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::string phase;
  double lr = 0;
  double train_loss = 0;
  metrics::Scores val;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // index into history, 1-based
  double best_val_cc = 0;
  bool stopped_early = false;
};

template <class T>
struct ParameterSnapshot {
  std::vector<std::vector<T>> params, buffers;

  static ParameterSnapshot take(SaliencyModel<T>& m) {
    ParameterSnapshot s;
    for (auto& [_, p] : m.named_parameters()) s.params.push_back(p.to_vector());
    for (auto& [_, b] : m.named_buffers()) s.buffers.push_back(*b);
    return s;
  }
  void restore(SaliencyModel<T>& m) const {
    auto ps = m.named_parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto d = ps[i].second.mutable_data();
      std::copy(params[i].begin(), params[i].end(), d.begin());
    }
    auto bs = m.named_buffers();
    for (std::size_t i = 0; i < bs.size(); ++i) *bs[i].second = buffers[i];
  }
};

/// Copies every parameter and buffer whose name and shape match.
template <class T>
std::size_t transfer_parameters(SaliencyModel<T>& from, SaliencyModel<T>& to) {
  std::size_t n = 0;
  auto src = from.named_parameters();
  for (auto& [name, p] : to.named_parameters()) {
    for (auto& [sn, sp] : src) {
      if (sn == name && sp.shape() == p.shape()) {
        auto d = p.mutable_data();
        std::copy(sp.data().begin(), sp.data().end(), d.begin());
        ++n;
      }
    }
  }
  auto sb = from.named_buffers();
  for (auto& [name, b] : to.named_buffers())
    for (auto& [sn, sbuf] : sb)
      if (sn == name && sbuf->size() == b->size()) *b = *sbuf;
  return n;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// One training phase: Adam, step decay, early stopping on validation CC.
/// The parameters of the best epoch are restored before returning.
template <class T>
TrainResult train_phase(SaliencyModel<T>& model, const std::vector<PreparedSample<T>>& train_set,
                        const std::vector<PreparedSample<T>>& val_set, const TrainConfig& cfg,
                        std::size_t epochs, const std::string& phase_name, bool freeze_visual,
                        const EpochCallback& on_epoch = {}) {
  if (train_set.empty()) throw ConfigError("data.train_samples", "training set is empty");
  if (val_set.empty()) throw ConfigError("data.val_samples", "validation set is empty");
  if (!(cfg.lr > 0)) throw ConfigError("train.lr", "learning rate must be positive");
  if (cfg.batch_size == 0) throw ConfigError("train.batch_size", "must be at least 1");
  std::vector<Tensor<T>> params;
  if (freeze_visual) {
    for (auto& [_, p] : model.audio_fusion_parameters()) params.push_back(p);
  } else {
    params = model.parameters();
  }
  Adam<T> opt(params, {cfg.lr});
  EarlyStopping stop(cfg.patience);
  TrainResult res;
  ParameterSnapshot<T> best = ParameterSnapshot<T>::take(model);
  std::mt19937_64 order_rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    opt.set_lr(step_lr(epoch, cfg.lr, cfg.lr_factor, cfg.lr_every));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    model.train();
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      model.zero_grad();
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      for (std::size_t k = b; k < end; ++k) {
        const auto& s = train_set[order[k]];
        reset_tape<T>();
        try {
          auto out = model.forward(s.clip, {s.audio});
          auto loss = composite_loss(s.gt, out.saliency, cfg.loss);
          total += static_cast<double>(loss.item());
          backward(scale(loss, T(1) / static_cast<T>(end - b)));
        } catch (const NumericError& e) {
          reset_tape<T>();
          throw NumericError("epoch " + std::to_string(epoch + 1) + ", sample " +
                             std::to_string(order[k]) + ": " + e.what());
        }
      }
      reset_tape<T>();
      opt.step();
    }
    model.zero_grad();
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.phase = phase_name;
    rec.lr = opt.lr();
    rec.train_loss = total / static_cast<double>(train_set.size());
    rec.val = evaluate(model, val_set, false, cfg.loss.eps).mean;
    res.history.push_back(rec);
    const bool halt = stop.update(rec.val.cc);
    if (stop.improved_last()) best = ParameterSnapshot<T>::take(model);
    if (on_epoch) on_epoch(rec);
    if (halt) {
      res.stopped_early = epoch + 1 < epochs;
      break;
    }
  }
  best.restore(model);
  res.best_epoch = stop.best_epoch();
  res.best_val_cc = stop.best();
  return res;
}

/// Full protocol. For two_phase the visual-only model is trained first and
/// its weights seed `model` before the full phase.
template <class T>
TrainResult train(SaliencyModel<T>& model, const std::vector<PreparedSample<T>>& train_set,
                  const std::vector<PreparedSample<T>>& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {}) {
  if (cfg.phase != Phase::kTwoPhase) {
    return train_phase(model, train_set, val_set, cfg, cfg.epochs, to_string(cfg.phase),
                       cfg.freeze_visual && model.audio() != nullptr, on_epoch);
  }
  ModelConfig vcfg = model.config();
  vcfg.use_audio = false;
  SaliencyModel<T> visual(vcfg);
  const std::size_t ve = cfg.visual_epochs ? cfg.visual_epochs : cfg.epochs;
  auto first = train_phase(visual, train_set, val_set, cfg, ve, "visual", false, on_epoch);
  transfer_parameters(visual, model);
  auto second = train_phase(model, train_set, val_set, cfg, cfg.epochs, "full", cfg.freeze_visual, on_epoch);
  TrainResult r = second;
  r.history = first.history;
  r.history.insert(r.history.end(), second.history.begin(), second.history.end());
  return r;
}

}  // namespace avsal
