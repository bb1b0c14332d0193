#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "avsal/error.hpp"

namespace avsal {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Row-major strides for a contiguous buffer of the given shape.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient flows here
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor;

/// Records differentiable operations in creation order so that backward can
/// replay them in reverse. One active tape per thread and scalar type.
template <class T>
class GradTape {
 public:
  using Rule = std::function<void(const TensorNode<T>&)>;

  static GradTape& active() {
    thread_local GradTape tape;
    return tape;
  }

  bool recording() const noexcept { return enabled_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& op_name(std::size_t i) const { return entries_.at(i).op; }

  void record(std::shared_ptr<TensorNode<T>> out, std::string op, Rule rule) {
    entries_.push_back({std::move(out), std::move(op), std::move(rule)});
  }

  void backward(const Tensor<T>& loss);

  /// Drops every recorded op and re-arms the tape.
  void reset() {
    entries_.clear();
    consumed_ = false;
  }

 private:
  struct Entry {
    std::shared_ptr<TensorNode<T>> out;
    std::string op;
    Rule rule;
  };
  template <class>
  friend class NoGradGuard;

  std::vector<Entry> entries_;
  bool consumed_ = false;
  bool enabled_ = true;
};

/// Disables recording on the active tape for its lifetime.
template <class T>
class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradTape<T>::active().enabled_) { GradTape<T>::active().enabled_ = false; }
  ~NoGradGuard() { GradTape<T>::active().enabled_ = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Dense row-major tensor handle. Copies share storage; forward ops always
/// allocate fresh outputs, so a tensor's values never change once produced
/// (leaf parameters are the exception and are updated by the optimizer).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<TensorNode<T>>()) {
    node_->data.assign(numel_of(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<TensorNode<T>>()) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{}, v); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Direct write access; only meaningful for leaves (inputs, parameters).
  std::span<T> mutable_data() { return node_->data; }
  std::vector<T> to_vector() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  T at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != ndim()) throw ShapeError("at(): rank mismatch");
    std::size_t off = 0;
    std::size_t i = 0;
    for (std::size_t v : idx) {
      if (v >= node_->shape[i]) throw ShapeError("at(): index out of range");
      off = off * node_->shape[i] + v;
      ++i;
    }
    return node_->data[off];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient buffer; an all-zero view is returned when nothing flowed here.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(numel(), T(0));
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

  /// Fresh leaf holding a copy of the values, detached from any tape.
  Tensor detach() const { return Tensor(shape(), node_->data); }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

template <class T>
void GradTape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw TapeError("backward called twice without reset()");
  if (!loss.defined() || loss.numel() != 1) {
    throw TapeError("backward requires a scalar loss");
  }
  consumed_ = true;
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->out->grad.empty()) continue;
    it->rule(*it->out);
  }
}

namespace detail {

template <class T>
void check_finite(const std::vector<T>& v, std::string_view op) {
  for (const T x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in forward output");
  }
}

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Wraps a freshly computed forward buffer into a tensor, validates it, and
/// records `rule` on the active tape when any input participates in autograd.
/// `rule` receives the output node (with its gradient populated).
template <class T, class Rule>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string_view op,
                      std::initializer_list<const Tensor<T>*> inputs, Rule&& rule) {
  check_finite(data, op);
  Tensor<T> out(std::move(shape), std::move(data));
  auto& tape = GradTape<T>::active();
  if (tape.recording() && any_requires_grad(inputs)) {
    out.set_requires_grad(true);
    tape.record(out.node(), std::string(op), std::forward<Rule>(rule));
  }
  return out;
}

/// Gradient accumulator for an input node, or nullptr when it does not need one.
template <class T>
T* grad_sink(const std::shared_ptr<TensorNode<T>>& n) {
  if (!n || !n->requires_grad) return nullptr;
  return n->ensure_grad().data();
}

}  // namespace detail

/// Runs reverse-mode accumulation from `loss` over the active tape.
template <class T>
void backward(const Tensor<T>& loss) {
  GradTape<T>::active().backward(loss);
}

template <class T>
void reset_tape() {
  GradTape<T>::active().reset();
}

}  // namespace avsal
