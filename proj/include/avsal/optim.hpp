#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avsal/tensor.hpp"

namespace avsal {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in double regardless of T.
template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  /// Applies one update from the current gradients; parameters without a
  /// gradient count as zero-gradient.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      const auto& g = p.node()->grad;
      if (!g.empty() && g.size() != p.numel()) throw ShapeError("adam: gradient shape mismatch");
      auto data = p.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1 - cfg_.beta1) * gi;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1 - cfg_.beta2) * gi * gi;
        const double mh = m_[k][i] / c1, vh = v_[k][i] / c2;
        data[i] = static_cast<T>(static_cast<double>(data[i]) - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::size_t step_count() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// base_lr * factor^floor(epoch / every).
inline double step_lr(std::size_t epoch, double base_lr, double factor = 0.1, std::size_t every = 3) {
  return base_lr * std::pow(factor, static_cast<double>(epoch / every));
}

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records the metric of the next epoch (1-based) and reports whether
  /// training should stop now.
  bool update(double value) {
    ++epoch_;
    if (epoch_ == 1 || value > best_) {
      best_ = value;
      best_epoch_ = epoch_;
      stale_ = 0;
    } else {
      ++stale_;
    }
    return stale_ >= patience_;
  }

  bool improved_last() const { return best_epoch_ == epoch_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0, best_epoch_ = 0, stale_ = 0;
  double best_ = 0.0;
};

}  // namespace avsal
