#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rulforge/errors.hpp"
#include "rulforge/rng.hpp"
#include "rulforge/tensor.hpp"

namespace rulforge::core {

enum class Mode { kTrain, kEval };

enum class Activation { kLeakyRelu, kRelu, kGelu, kHardswish, kSigmoid, kTanh };

inline Activation activation_from_string(const std::string& name) {
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "relu") return Activation::kRelu;
  if (name == "gelu") return Activation::kGelu;
  if (name == "hardswish") return Activation::kHardswish;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation: " + name);
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kRelu: return "relu";
    case Activation::kGelu: return "gelu";
    case Activation::kHardswish: return "hardswish";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

template <typename T>
class Tape;

// Handle to a tensor recorded on a tape. Cheap to copy; the tensor itself
// lives in the tape's node list.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode differentiation record. Operations append nodes in execution
// order, which is a topological order by construction; backward() replays the
// recorded closures once each, in reverse.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    check_value(value);
    nodes_.emplace_back();
    nodes_.back().value = std::move(value);
    nodes_.back().requires_grad = requires_grad;
    return Var<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  // Uses the tensor's requires_grad hint.
  Var<T> leaf(Tensor<T> value) {
    const bool rg = value.requires_grad;
    return leaf(std::move(value), rg);
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // New op output. Call set_backward on the returned var when it needs one.
  Var<T> emit(Tensor<T> value, bool requires_grad) {
    check_value(value);
    nodes_.emplace_back();
    nodes_.back().value = std::move(value);
    nodes_.back().requires_grad = requires_grad;
    return Var<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  void set_backward(Var<T> v, std::function<void()> fn) {
    nodes_[v.id].backward = std::move(fn);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }

  bool has_grad(Var<T> v) const { return !nodes_[v.id].grad.empty(); }

  const Tensor<T>& grad(Var<T> v) const {
    if (!has_grad(v)) throw StateError("no gradient recorded for this variable");
    return nodes_[v.id].grad;
  }

  // Gradient of the node, allocated as zeros on first touch.
  Tensor<T>& grad_acc(std::int32_t id) {
    Node& node = nodes_[id];
    if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape());
    return node.grad;
  }

  // Accumulation target, or nullptr when the node does not track gradients.
  Tensor<T>* grad_sink(std::int32_t id) {
    return nodes_[id].requires_grad ? &grad_acc(id) : nullptr;
  }

  bool requires_grad(std::int32_t id) const { return nodes_[id].requires_grad; }

  // Seeds d(loss)/d(loss) = 1 and visits every node at most once, in reverse
  // recording order (reverse topological order).
  void backward(Var<T> loss) {
    if (!loss.valid() || loss.tape != this) throw ContractError("loss is not on this tape");
    if (nodes_[loss.id].value.numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(nodes_[loss.id].value.shape()));
    }
    grad_acc(loss.id)[0] = T(1);
    for (std::int32_t id = loss.id; id >= 0; --id) {
      Node& node = nodes_[id];
      if (node.requires_grad && !node.grad.empty() && node.backward) node.backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Debug assertion: scan every op output for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::function<void()> backward;
  };

  void check_value(const Tensor<T>& t) const {
    if (check_finite_ && !t.all_finite()) {
      throw ContractError("non-finite values in tensor " + shape_str(t.shape()));
    }
  }

  std::vector<Node> nodes_;
  bool check_finite_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

namespace detail {

template <typename T>
void require_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

// Vectorizable reduction; the lane split is fixed at compile time, so results
// stay bitwise reproducible run to run for a given binary.
template <typename T>
inline T dot(const T* a, const T* b, std::int64_t n) {
  T acc = T(0);
#if defined(_OPENMP) && _OPENMP >= 201307
#pragma omp simd reduction(+ : acc)
#endif
  for (std::int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

}  // namespace rulforge::core
