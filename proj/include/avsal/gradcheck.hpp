#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "avsal/module.hpp"

namespace avsal {

struct GradCheckOptions {
  double step = 1e-5;          // central-difference step h
  double tolerance = 1e-4;     // max accepted relative error
  double denom_floor = 1e-5;   // |a-n| / max(|a|, |n|, floor)
  std::size_t max_entries = 0; // per leaf; 0 checks every entry
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  bool passed = true;
  std::string worst;  // "leaf[index]" of the largest error
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of `loss_fn` with central finite
/// differences for every (or a sampled subset of) entry of each leaf.
/// `loss_fn` must be deterministic and build its graph from the current leaf
/// values; it is called once with the tape recording and then twice per
/// probed entry under NoGradGuard.
inline GradCheckResult check_gradients(const std::string& name,
                                       std::vector<std::pair<std::string, Tensor<double>>> leaves,
                                       const std::function<Tensor<double>()>& loss_fn,
                                       const GradCheckOptions& opt = {}) {
  GradCheckResult res;
  res.name = name;
  reset_tape<double>();
  for (auto& [_, t] : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& [_, t] : leaves) analytic.push_back(t.grad());
  reset_tape<double>();

  NoGradGuard<double> no_grad;
  Rng pick(opt.sample_seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& [lname, t] = leaves[li];
    auto data = t.mutable_data();
    std::vector<std::size_t> idx;
    if (opt.max_entries == 0 || opt.max_entries >= data.size()) {
      for (std::size_t i = 0; i < data.size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t k = 0; k < opt.max_entries; ++k) idx.push_back(pick.next() % data.size());
    }
    for (std::size_t i : idx) {
      const double orig = data[i];
      data[i] = orig + opt.step;
      const double fp = loss_fn().item();
      data[i] = orig - opt.step;
      const double fm = loss_fn().item();
      data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double err = relative_error(analytic[li][i], numeric, opt.denom_floor);
      ++res.entries_checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = lname + "[" + std::to_string(i) + "]";
        res.worst_analytic = analytic[li][i];
        res.worst_numeric = numeric;
      }
    }
  }
  res.passed = res.max_rel_error < opt.tolerance;
  return res;
}

/// Fixed random projection so that checks exercise every output entry with
/// distinct weights: loss = sum(out * R), accumulated in long double.
inline Tensor<double> projected_loss(const Tensor<double>& out, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<double> r(out.numel());
  for (auto& v : r) v = rng.uniform(-1.0, 1.0);
  long double acc = 0;
  for (std::size_t i = 0; i < r.size(); ++i) acc += static_cast<long double>(out.data()[i]) * r[i];
  return detail::make_result<double>({}, {static_cast<double>(acc)}, "projected_loss", {&out},
                                     [on = out.node(), r = std::move(r)](const TensorNode<double>& o) {
                                       if (double* g = detail::grad_sink(on))
                                         for (std::size_t i = 0; i < r.size(); ++i) g[i] += o.grad[0] * r[i];
                                     });
}

}  // namespace avsal
