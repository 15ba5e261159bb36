#pragma once

// Dense row-major tensors plus reverse-mode differentiation over an explicit
// operation tape. Image cubes use the (height, width, channels) axis order,
// y before x.

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pidm/errors.hpp"

namespace pidm {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) {
    if (e <= 0) throw ShapeError("tensor extent must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Shared storage. Values are written once by the producing operation; only
// the gradient accumulator is mutated afterwards.
template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated iff requires_grad, starts at zero
  bool requires_grad = false;

  void ensure_grad() {
    if (requires_grad && grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = shape;
    t.node_->value.assign(std::size_t(shape_numel(shape)), S(0));
    t.node_->requires_grad = requires_grad;
    t.node_->ensure_grad();
    return t;
  }

  static Tensor full(const Shape& shape, S v, bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    for (auto& e : t.node_->value) e = v;
    return t;
  }

  static Tensor from(const Shape& shape, std::vector<S> values, bool requires_grad = false) {
    if (std::int64_t(values.size()) != shape_numel(shape))
      throw ShapeError("value count does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = shape;
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    t.node_->ensure_grad();
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return int(node_->shape.size()); }
  int extent(int axis) const { return node_->shape[std::size_t(axis)]; }
  std::int64_t numel() const { return std::int64_t(node_->value.size()); }

  // Handle semantics: a const handle still exposes mutable storage, which the
  // recorded backward closures rely on to accumulate gradients.
  S* data() const { return node_->value.data(); }
  std::vector<S>& values() const { return node_->value; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) const {
    node_->requires_grad = rg;
    node_->ensure_grad();
  }
  S* grad() const { return node_->grad.data(); }
  std::vector<S>& grad_values() const { return node_->grad; }
  void zero_grad() const {
    for (auto& g : node_->grad) g = S(0);
  }

  S item() const {
    if (numel() != 1) throw ShapeError("item() on tensor " + shape_str(shape()));
    return node_->value[0];
  }

  std::shared_ptr<TensorNode<S>> ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

// Reverse-mode tape. Forward ops append closures; backward() seeds the loss
// gradient with one and unwinds in reverse order. Single-threaded by design;
// each graph owns its tape.
template <class S>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  std::size_t size() const { return steps_.size(); }

  void backward(Tensor<S>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward() expects a scalar loss");
    if (!loss.requires_grad())
      throw NumericError("loss does not depend on any tracked parameter");
    loss.grad()[0] += S(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// True when an op must record a backward step for these inputs.
template <class S>
inline bool tracked(const Tape<S>* tape, std::initializer_list<const Tensor<S>*> inputs) {
  if (!tape) return false;
  for (const auto* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

inline std::int64_t idx3(int y, int x, int c, int w, int ch) {
  return (std::int64_t(y) * w + x) * ch + c;
}

}  // namespace pidm
