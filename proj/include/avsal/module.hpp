#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avsal/ops.hpp"

namespace avsal {

/// Deterministic parameter initializer. All weights of a model are drawn from
/// one stream in construction order, so a seed fully determines the model.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

  template <class T>
  Tensor<T> uniform_tensor(Shape shape, double bound) {
    std::vector<T> v(numel_of(shape));
    for (auto& x : v) x = static_cast<T>(uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(v));
  }
  template <class T>
  Tensor<T> normal_tensor(Shape shape, double stddev) {
    std::vector<T> v(numel_of(shape));
    for (auto& x : v) x = static_cast<T>(normal(0.0, stddev));
    return Tensor<T>(std::move(shape), std::move(v));
  }

 private:
  std::mt19937_64 engine_;
};

/// Base for trainable components. Parameters and buffers are registered once
/// at construction; children are owned by the subclass and referenced here,
/// so modules are neither copyable nor movable.
template <class T>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  using NamedTensor = std::pair<std::string, Tensor<T>>;
  using NamedBuffer = std::pair<std::string, std::vector<T>*>;

  std::vector<NamedTensor> named_parameters() const {
    std::vector<NamedTensor> out;
    collect_parameters("", out);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [_, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::vector<NamedBuffer> named_buffers() {
    std::vector<NamedBuffer> out;
    collect_buffers("", out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [_, t] : named_parameters()) n += t.numel();
    return n;
  }

  void train(bool on = true) {
    training_ = on;
    for (auto& [_, c] : children_) c->train(on);
  }
  void eval() { train(false); }
  bool training() const { return training_; }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }

 protected:
  Tensor<T> register_parameter(std::string name, Tensor<T> t) {
    t.set_requires_grad(true);
    params_.emplace_back(std::move(name), t);
    return t;
  }
  void register_module(std::string name, Module* child) {
    children_.emplace_back(std::move(name), child);
  }
  void register_buffer(std::string name, std::vector<T>* buffer) {
    buffers_.emplace_back(std::move(name), buffer);
  }

 private:
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
    for (auto& [n, t] : params_) out.emplace_back(prefix + n, t);
    for (auto& [n, c] : children_) c->collect_parameters(prefix + n + ".", out);
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
    for (auto& [n, b] : buffers_) out.emplace_back(prefix + n, b);
    for (auto& [n, c] : children_) c->collect_buffers(prefix + n + ".", out);
  }

  std::vector<NamedTensor> params_;
  std::vector<std::pair<std::string, Module*>> children_;
  std::vector<NamedBuffer> buffers_;
  bool training_ = true;
};

struct ConvSpec {
  std::size_t in = 1, out = 1;
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple pad{0, 0, 0};
  bool bias = true;
};

/// "Same" padding for odd kernels at unit stride.
inline Triple same_pad(Triple k) { return {k[0] / 2, k[1] / 2, k[2] / 2}; }

template <class T>
class Conv3d : public Module<T> {
 public:
  Conv3d(const ConvSpec& spec, Rng& rng) : spec_(spec) {
    const double fan_in = static_cast<double>(spec.in * spec.kernel[0] * spec.kernel[1] * spec.kernel[2]);
    const double bound = 1.0 / std::sqrt(fan_in);
    weight_ = this->register_parameter(
        "weight", rng.uniform_tensor<T>({spec.out, spec.in, spec.kernel[0], spec.kernel[1],
                                         spec.kernel[2]},
                                        bound));
    if (spec.bias) bias_ = this->register_parameter("bias", rng.uniform_tensor<T>({spec.out}, bound));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv3d(x, weight_, bias_, spec_.stride, spec_.pad);
  }
  Shape output_shape(const Shape& in) const {
    return conv3d_shape(in, weight_.shape(), spec_.stride, spec_.pad);
  }

  const ConvSpec& spec() const { return spec_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  ConvSpec spec_;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

template <class T>
class Linear : public Module<T> {
 public:
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = this->register_parameter("weight", rng.uniform_tensor<T>({out, in}, bound));
    if (with_bias) bias_ = this->register_parameter("bias", rng.uniform_tensor<T>({out}, bound));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight_, bias_); }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

/// Layer norm with affine parameters over the axis range [first, last].
template <class T>
class LayerNorm : public Module<T> {
 public:
  LayerNorm(Shape normalized, std::size_t first, std::size_t last, T eps = T(1e-5))
      : first_(first), last_(last), eps_(eps) {
    gamma_ = this->register_parameter("gamma", Tensor<T>::ones(normalized));
    beta_ = this->register_parameter("beta", Tensor<T>::zeros(normalized));
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    return layer_norm(x, first_, last_, gamma_, beta_, eps_);
  }

 private:
  std::size_t first_, last_;
  T eps_;
  Tensor<T> gamma_, beta_;
};

template <class T>
class BatchNorm3d : public Module<T> {
 public:
  explicit BatchNorm3d(std::size_t channels, T eps = T(1e-5)) : eps_(eps) {
    gamma_ = this->register_parameter("gamma", Tensor<T>::ones({channels}));
    beta_ = this->register_parameter("beta", Tensor<T>::zeros({channels}));
    state_.running_mean.assign(channels, T(0));
    state_.running_var.assign(channels, T(1));
    this->register_buffer("running_mean", &state_.running_mean);
    this->register_buffer("running_var", &state_.running_var);
  }
  Tensor<T> operator()(const Tensor<T>& x) {
    return batch_norm(x, gamma_, beta_, state_, this->training(), eps_);
  }
  BatchNormState<T>& state() { return state_; }

 private:
  T eps_;
  Tensor<T> gamma_, beta_;
  BatchNormState<T> state_;
};

}  // namespace avsal
